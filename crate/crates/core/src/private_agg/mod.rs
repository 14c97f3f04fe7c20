//! Paillier encryption and the encrypted ring aggregation of occupancy
//! counts, plus log-linear learning driven by it.
//!
//! Key sizes used in tests (256 to 512 bits) are for speed only and offer
//! no real protection; use 2048 bits or more in a deployment.

mod paillier;
mod ring;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use paillier::{keygen, Ciphertext, Keypair, PrivateKey, PublicKey};
pub use ring::{
    chain_aggregate, check_labels, private_g, CipherMatrix, Initiator, Relay, RingMessage, Transcript,
    TranscriptEntry,
};

use crate::error::Result;
use crate::scheduler::learning::run_learning_with;
use crate::scheduler::{interaction_groups, LearningOptions, LearningRun};
use crate::scheduler::SchedulingProblem;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PrivateLearningOptions {
    pub learning: LearningOptions,
    pub key_bits: usize,
    /// Seeds key generation and encryption randomness; independent of the
    /// learning seed.
    pub crypto_seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrivateLearningRun {
    pub run: LearningRun,
    pub ring_passes: usize,
    pub messages: usize,
    /// Chained digest over every transcript.
    pub transcript_digest: String,
    /// Transcript of the last ring pass.
    pub last_transcript: Transcript,
}

/// Log-linear learning in which the updating vehicle gets its counts from
/// one ring pass per iteration. The ring spans the vehicle's interaction
/// group (vehicles that can ever share an edge-step with it), starting with
/// the vehicle itself; vehicles outside it cannot touch any cell it reads.
/// A vehicle alone in its group needs no pass.
pub fn run_private_learning(
    problem: &SchedulingProblem,
    initial: &[usize],
    opts: &PrivateLearningOptions,
) -> Result<PrivateLearningRun> {
    problem.validate()?;
    problem.check_delays(initial)?;
    let mut group_of = vec![0; problem.vehicles.len()];
    let groups = interaction_groups(problem);
    for (g, members) in groups.iter().enumerate() {
        for &v in members {
            group_of[v] = g;
        }
    }
    let labels: Vec<usize> = (0..problem.graph.edges.len()).collect();
    let mut crypto = ChaCha20Rng::seed_from_u64(opts.crypto_seed);
    let mut keys: BTreeMap<usize, Keypair> = BTreeMap::new();
    let mut passes = 0;
    let mut messages = 0;
    let mut chain = Sha256::new();
    let mut last = Transcript::default();
    let run = run_learning_with(problem, initial, &opts.learning, |i, delays| {
        let members = &groups[group_of[i]];
        if members.len() < 2 {
            return Ok(vec![0; problem.horizon * problem.graph.edges.len()]);
        }
        let start = members.iter().position(|&v| v == i).unwrap_or(0);
        let order: Vec<usize> = members[start..].iter().chain(&members[..start]).copied().collect();
        if !keys.contains_key(&i) {
            keys.insert(i, keygen(opts.key_bits, &mut crypto)?);
        }
        let (zeta, transcript) = chain_aggregate(problem, delays, &order, &keys[&i], &labels, &mut crypto)?;
        passes += 1;
        messages += transcript.entries.len();
        chain.update(transcript.digest().as_bytes());
        last = transcript;
        Ok(zeta)
    })?;
    Ok(PrivateLearningRun {
        run,
        ring_passes: passes,
        messages,
        transcript_digest: hex::encode(chain.finalize()),
        last_transcript: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::learning::run_learning;
    use crate::scheduler::{CountReward, FreightEdge, FreightGraph, VehicleAssignment};

    fn instance() -> SchedulingProblem {
        // two interacting vehicles on a line plus one far away in time
        let g = FreightGraph {
            edges: (0..3)
                .map(|k| FreightEdge {
                    from: k.to_string(),
                    to: (k + 1).to_string(),
                    weight: 1.0 + k as f64,
                    dwell: 2,
                })
                .collect(),
        };
        let horizon = 20;
        let mut vehicles = vec![
            VehicleAssignment::from_path(&g, &[0, 1, 2], 0, horizon, (0, 2)).unwrap(),
            VehicleAssignment::from_path(&g, &[0, 1, 2], 1, horizon, (0, 2)).unwrap(),
            VehicleAssignment::from_path(&g, &[1, 2], 2, horizon, (0, 1)).unwrap(),
            VehicleAssignment::from_path(&g, &[2], 14, horizon, (0, 2)).unwrap(),
        ];
        vehicles[1].delay_cost = vec![0.0, 0.5, 2.0];
        SchedulingProblem {
            graph: g,
            vehicles,
            horizon,
            gamma: 1.0,
            reward: CountReward::Square,
        }
    }

    #[test]
    fn private_trajectory_equals_plaintext() {
        let p = instance();
        let learning = LearningOptions {
            iterations: 60,
            seed: 9,
            temperature: 0.7,
            track_visits: false,
        };
        let plain = run_learning(&p, &[0, 0, 0, 0], &learning).unwrap();
        let private = run_private_learning(
            &p,
            &[0, 0, 0, 0],
            &PrivateLearningOptions {
                learning,
                key_bits: 256,
                crypto_seed: 77,
            },
        )
        .unwrap();
        assert_eq!(private.run.moves, plain.moves);
        assert_eq!(private.run.costs, plain.costs);
        assert_eq!(private.run.last, plain.last);
        assert!(private.ring_passes > 0 && private.ring_passes < 60);
    }

    #[test]
    fn private_g_matches_plaintext_on_random_states() {
        use rand::Rng;
        let p = instance();
        let k = keygen(256, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut crypto = ChaCha20Rng::seed_from_u64(3);
        let labels = [2, 0, 1];
        for _ in 0..100 {
            let delays: Vec<usize> = p.vehicles.iter().map(|v| rng.gen_range(v.delays())).collect();
            let i = rng.gen_range(0..p.vehicles.len());
            let order: Vec<usize> = (0..p.vehicles.len()).map(|k| (i + k) % p.vehicles.len()).collect();
            let (zeta, _) = chain_aggregate(&p, &delays, &order, &k, &labels, &mut crypto).unwrap();
            let plain = p.occupancy_excluding(&delays, Some(i));
            assert_eq!(zeta, plain);
            for tau in p.vehicles[i].delays() {
                let mut d = delays.clone();
                d[i] = tau;
                let direct = p.platoon_term(&p.occupancy(&d));
                let g = private_g(&p, i, &zeta, tau).unwrap();
                assert_eq!(g, p.g_values(i, &plain)[tau - p.vehicles[i].window.0]);
                assert!((g - direct).abs() < 1e-9);
            }
        }
    }
}
