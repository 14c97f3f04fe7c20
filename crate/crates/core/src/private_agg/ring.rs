//! Ring pass computing encrypted occupancy counts.
//!
//! The initiating vehicle owns the keypair and seeds a matrix of `E(0)`.
//! Every other vehicle in the ring adds `E(1)` where its walk is and `E(0)`
//! elsewhere, then forwards the matrix on its outgoing channel. Only the
//! initiator can decrypt; relays never hold a private key.

use std::collections::VecDeque;

use rand::{CryptoRng, RngCore};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::paillier::{Ciphertext, Keypair, PublicKey};
use crate::error::{Error, Result};
use crate::scheduler::SchedulingProblem;

/// `|E| × |T|` ciphertexts under the edge labelling `σ`.
#[derive(Clone, Debug)]
pub struct CipherMatrix {
    pub edges: usize,
    pub steps: usize,
    /// `labels[e] = σ(e)`, zero-based.
    pub labels: Vec<usize>,
    /// `entries[σ(e) * steps + (t - 1)]`
    pub entries: Vec<Ciphertext>,
}

fn dim(expected: usize, found: usize) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

pub fn check_labels(labels: &[usize]) -> Result<()> {
    let mut seen = vec![false; labels.len()];
    for &l in labels {
        if l >= labels.len() || std::mem::replace(&mut seen[l], true) {
            return Err(Error::InvalidInput("edge labelling is not a bijection".into()));
        }
    }
    Ok(())
}

impl CipherMatrix {
    pub fn check(&self, edges: usize, steps: usize) -> Result<()> {
        if self.edges != edges || self.labels.len() != edges {
            return Err(dim(edges, self.labels.len().max(self.edges)));
        }
        if self.steps != steps {
            return Err(dim(steps, self.steps));
        }
        if self.entries.len() != edges * steps {
            return Err(dim(edges * steps, self.entries.len()));
        }
        check_labels(&self.labels)
    }

    fn slot(&self, t: usize, e: usize) -> usize {
        self.labels[e] * self.steps + (t - 1)
    }

    /// SHA-256 over all ciphertexts, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.entries {
            let bytes = c.value.to_bytes_be();
            h.update((bytes.len() as u64).to_be_bytes());
            h.update(bytes);
        }
        hex::encode(h.finalize())
    }
}

/// What travels on a channel: the running matrix and the key to add under.
#[derive(Clone, Debug)]
pub struct RingMessage {
    pub hop: usize,
    pub from: usize,
    pub to: usize,
    pub public: PublicKey,
    pub matrix: CipherMatrix,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub hop: usize,
    pub from: usize,
    pub to: usize,
    pub key: String,
    pub entries: usize,
    pub digest: String,
}

/// Audit record of a ring pass. Holds digests only.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    fn record(&mut self, msg: &RingMessage) {
        self.entries.push(TranscriptEntry {
            hop: msg.hop,
            from: msg.from,
            to: msg.to,
            key: format!("{:016x}", msg.public.fingerprint()),
            entries: msg.matrix.entries.len(),
            digest: msg.matrix.digest(),
        });
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.digest.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug)]
enum InitiatorState {
    Idle,
    Waiting,
    Done,
}

/// Vehicle 1 of the ring. The only party holding a keypair.
#[derive(Debug)]
pub struct Initiator<'k> {
    pub vehicle: usize,
    keypair: &'k Keypair,
    state: InitiatorState,
}

impl<'k> Initiator<'k> {
    pub fn new(vehicle: usize, keypair: &'k Keypair) -> Self {
        Self {
            vehicle,
            keypair,
            state: InitiatorState::Idle,
        }
    }

    pub fn start<R: RngCore + CryptoRng>(
        &mut self,
        edges: usize,
        steps: usize,
        labels: &[usize],
        to: usize,
        rng: &mut R,
    ) -> Result<RingMessage> {
        if !matches!(self.state, InitiatorState::Idle) {
            return Err(Error::InvalidInput("ring pass already started".into()));
        }
        if labels.len() != edges {
            return Err(dim(edges, labels.len()));
        }
        check_labels(labels)?;
        let public = self.keypair.public.clone();
        let entries = (0..edges * steps)
            .map(|_| public.encrypt_u64(0, rng))
            .collect::<Result<Vec<_>>>()?;
        self.state = InitiatorState::Waiting;
        Ok(RingMessage {
            hop: 0,
            from: self.vehicle,
            to,
            public,
            matrix: CipherMatrix {
                edges,
                steps,
                labels: labels.to_vec(),
                entries,
            },
        })
    }

    /// Decrypts the returned matrix into counts, row-major `[t - 1][e]`.
    pub fn finish(&mut self, msg: RingMessage, edges: usize, steps: usize) -> Result<Vec<u32>> {
        if !matches!(self.state, InitiatorState::Waiting) {
            return Err(Error::InvalidInput("no ring pass in flight".into()));
        }
        if msg.to != self.vehicle {
            return Err(Error::InvalidInput(format!("message for vehicle {} reached vehicle {}", msg.to, self.vehicle)));
        }
        if msg.public != self.keypair.public {
            return Err(Error::KeyMismatch);
        }
        msg.matrix.check(edges, steps)?;
        let mut zeta = vec![0u32; edges * steps];
        for t in 1..=steps {
            for e in 0..edges {
                let v = self.keypair.decrypt_u64(&msg.matrix.entries[msg.matrix.slot(t, e)])?;
                zeta[(t - 1) * edges + e] = u32::try_from(v)
                    .map_err(|_| Error::InvalidInput(format!("decrypted count {v} out of range")))?;
            }
        }
        self.state = InitiatorState::Done;
        Ok(zeta)
    }
}

/// Any other vehicle: knows its own occupied cells and nothing secret.
#[derive(Clone, Debug)]
pub struct Relay {
    pub vehicle: usize,
    /// `(t, e)` cells with `e_j(t - τ_j) = e`.
    cells: Vec<(usize, usize)>,
}

impl Relay {
    pub fn new(problem: &SchedulingProblem, vehicle: usize, delay: usize) -> Self {
        Self {
            vehicle,
            cells: problem.vehicles[vehicle].occupied(delay).collect(),
        }
    }

    pub fn handle<R: RngCore + CryptoRng>(
        &self,
        msg: RingMessage,
        edges: usize,
        steps: usize,
        to: usize,
        rng: &mut R,
    ) -> Result<RingMessage> {
        if msg.to != self.vehicle {
            return Err(Error::InvalidInput(format!("message for vehicle {} reached vehicle {}", msg.to, self.vehicle)));
        }
        msg.matrix.check(edges, steps)?;
        let key = msg.public.fingerprint();
        if msg.matrix.entries.iter().any(|c| c.key != key) {
            return Err(Error::KeyMismatch);
        }
        let mut bits = vec![0u64; edges * steps];
        for &(t, e) in &self.cells {
            if t >= 1 && t <= steps && e < edges {
                bits[msg.matrix.slot(t, e)] = 1;
            }
        }
        let entries = msg
            .matrix
            .entries
            .iter()
            .zip(&bits)
            .map(|(c, &b)| msg.public.add(c, &msg.public.encrypt_u64(b, rng)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(RingMessage {
            hop: msg.hop + 1,
            from: self.vehicle,
            to,
            public: msg.public,
            matrix: CipherMatrix { entries, ..msg.matrix },
        })
    }
}

/// One ring pass over `order` (initiator first) under the initiator's
/// `keypair`. Returns `ζ` of the initiator, row-major `[t - 1][e]`, and the
/// transcript of every hop.
pub fn chain_aggregate<R: RngCore + CryptoRng>(
    problem: &SchedulingProblem,
    delays: &[usize],
    order: &[usize],
    keypair: &Keypair,
    labels: &[usize],
    rng: &mut R,
) -> Result<(Vec<u32>, Transcript)> {
    if order.len() < 2 {
        return Err(Error::InvalidInput("a ring needs at least two vehicles".into()));
    }
    if delays.len() != problem.vehicles.len() {
        return Err(dim(problem.vehicles.len(), delays.len()));
    }
    if let Some(&bad) = order.iter().find(|&&v| v >= problem.vehicles.len()) {
        return Err(Error::InvalidInput(format!("unknown vehicle {bad}")));
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("a vehicle appears twice in the ring".into()));
    }
    let edges = problem.graph.edges.len();
    let steps = problem.horizon;
    let m = order.len();
    let mut initiator = Initiator::new(order[0], keypair);
    let relays: Vec<Relay> = order[1..].iter().map(|&v| Relay::new(problem, v, delays[v])).collect();
    // channel k carries messages from order[k] to order[(k + 1) % m]
    let mut channels: Vec<VecDeque<RingMessage>> = (0..m).map(|_| VecDeque::new()).collect();
    let mut transcript = Transcript::default();

    let first = initiator.start(edges, steps, labels, order[1], rng)?;
    transcript.record(&first);
    channels[0].push_back(first);
    for (k, relay) in relays.iter().enumerate() {
        let msg = channels[k]
            .pop_front()
            .ok_or_else(|| Error::InvalidInput("empty channel".into()))?;
        let out = relay.handle(msg, edges, steps, order[(k + 2) % m], rng)?;
        transcript.record(&out);
        channels[k + 1].push_back(out);
    }
    let back = channels[m - 1]
        .pop_front()
        .ok_or_else(|| Error::InvalidInput("empty channel".into()))?;
    let zeta = initiator.finish(back, edges, steps)?;
    Ok((zeta, transcript))
}

/// `g(τ', τ_{-i})` evaluated by vehicle `i` from `ζ`:
/// `-γ Σ_t Σ_e w_e f(ζ_{t,e} + 1[e_i(t - τ') = e])`.
pub fn private_g(problem: &SchedulingProblem, i: usize, zeta: &[u32], tau: usize) -> Result<f64> {
    let v = &problem.vehicles[i];
    if !v.delays().contains(&tau) {
        return Err(Error::InvalidInput(format!("delay {tau} outside the window of vehicle {i}")));
    }
    let expected = problem.horizon * problem.graph.edges.len();
    if zeta.len() != expected {
        return Err(dim(expected, zeta.len()));
    }
    Ok(problem.g_values(i, zeta)[tau - v.window.0])
}
