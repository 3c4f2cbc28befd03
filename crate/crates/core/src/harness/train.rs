use numcore::{clip_global_norm, Adam, AdamConfig, Grads, Graph};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::{HarnessError, Result, TrainConfig};
use crate::agent::Loc4Plan;
use crate::envgraph::EnvGraph;
use crate::worldgen::{derived_rng, Dataset, InstructionRecord, Split};

/// Per-epoch means over training episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ap: f64,
    pub l_bal: f64,
    pub l_hsa: f64,
    pub l_total: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_tc: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Loc4Plan,
    pub log: Vec<EpochLog>,
}

/// Trains on the training split of `dataset`, which must belong to `env`.
pub fn train(config: &TrainConfig, env: &EnvGraph, dataset: &Dataset) -> Result<TrainOutcome> {
    dataset.validate_against(env)?;
    if config.agent.vocab_size != dataset.vocab().len() {
        return Err(HarnessError::InvalidConfig(format!(
            "agent vocab_size {} does not match the dataset vocabulary ({})",
            config.agent.vocab_size,
            dataset.vocab().len()
        )));
    }
    let records: Vec<InstructionRecord> = dataset.records.iter().filter(|r| r.split == Split::Train).cloned().collect();
    train_on(config, env, &records)
}

/// Teacher-forced training on `records`. The model is initialized from
/// `config.seed`; batches are shuffled per epoch from the same seed and
/// per-episode gradients are summed in batch order, so the result does not
/// depend on thread scheduling.
pub fn train_on(config: &TrainConfig, env: &EnvGraph, records: &[InstructionRecord]) -> Result<TrainOutcome> {
    config.validate()?;
    if config.agent.d_v != env.d_v() || config.agent.bins != env.bins() {
        return Err(HarnessError::InvalidConfig(format!(
            "agent expects {}x{} views, world provides {}x{}",
            config.agent.bins,
            config.agent.d_v,
            env.bins(),
            env.d_v()
        )));
    }
    let mut agent = config.agent.clone();
    agent.init_seed = config.seed;
    let mut model = Loc4Plan::new(agent)?;
    let mut adam =
        Adam::new(AdamConfig { lr: config.lr, beta1: config.beta1, beta2: config.beta2, eps: config.eps }, model.store());
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..records.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut derived_rng(config.seed, 7, epoch as u64));
        let mut sums = [0.0; 4];
        let mut norms = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let store = model.store();
            let per_episode = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::new(store);
                    let (l, _) = model.episode_loss(&mut g, env, &records[i])?;
                    let grads = g.backward(l.total).map_err(crate::agent::AgentError::from)?;
                    Ok((grads, [g.item(l.ap), g.item(l.bal), g.item(l.hsa), g.item(l.total)]))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Grads::zeros_like(store);
            for (gr, terms) in &per_episode {
                grads.add_assign(gr);
                sums.iter_mut().zip(terms).for_each(|(s, t)| *s += t);
            }
            grads.scale(1.0 / batch.len() as f64);
            norms += clip_global_norm(&mut grads, config.grad_clip_norm);
            batches += 1;
            adam.step(model.store_mut(), &grads);
        }
        let n = records.len().max(1) as f64;
        let train_tc = if config.eval_every > 0 && epoch % config.eval_every == 0 {
            Some(evaluate(&model, env, records, config.tc_mode)?.0.tc)
        } else {
            None
        };
        log.push(EpochLog {
            epoch,
            l_ap: sums[0] / n,
            l_bal: sums[1] / n,
            l_hsa: sums[2] / n,
            l_total: sums[3] / n,
            grad_norm: norms / batches.max(1) as f64,
            train_tc,
        });
    }
    Ok(TrainOutcome { model, log })
}
