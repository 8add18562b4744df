//! Executable privacy-model plumbing: streaming protocols with an
//! inspectable internal state, sequentially interactive local protocols
//! built from per-element randomizers, and the constructive transformations
//! between the two worlds.
//!
//! Protocol steps return explicit finite distributions over byte-encoded
//! states. Sampling draws from those distributions; the same objects also
//! support exact enumeration of small state spaces, which is how the
//! distribution-identity checks avoid relying on Monte-Carlo alone.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub type Bytes = Vec<u8>;

type StepFn = Arc<dyn Fn(&[u8], usize) -> Result<Dist> + Send + Sync>;
type OutputFn = Arc<dyn Fn(&[u8]) -> Result<Dist> + Send + Sync>;
type ChooseFn = Arc<dyn Fn(&Transcript) -> Result<Randomizer> + Send + Sync>;
type ApplyFn = Arc<dyn Fn(usize) -> Result<Dist> + Send + Sync>;

/// A finite-support distribution over byte strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dist {
    outcomes: Vec<(Bytes, f64)>,
}

impl Dist {
    pub fn point(value: Bytes) -> Self {
        Dist {
            outcomes: vec![(value, 1.0)],
        }
    }

    pub fn new(outcomes: Vec<(Bytes, f64)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::domain("distribution needs at least one outcome"));
        }
        if outcomes.iter().any(|(_, p)| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("outcome probabilities must be non-negative"));
        }
        let sum: f64 = outcomes.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("outcome probabilities sum to {sum}")));
        }
        Ok(Dist { outcomes })
    }

    pub fn outcomes(&self) -> &[(Bytes, f64)] {
        &self.outcomes
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Bytes {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (v, p) in &self.outcomes {
            acc += p;
            if u < acc {
                return v.clone();
            }
        }
        self.outcomes.last().expect("non-empty").0.clone()
    }

    /// Push the distribution through a function, merging outcomes that land
    /// on the same value.
    pub fn map(&self, f: impl Fn(&Bytes) -> Bytes) -> Dist {
        let mut merged: BTreeMap<Bytes, f64> = BTreeMap::new();
        for (v, p) in &self.outcomes {
            *merged.entry(f(v)).or_insert(0.0) += p;
        }
        Dist {
            outcomes: merged.into_iter().collect(),
        }
    }

    pub fn try_map(&self, f: impl Fn(&Bytes) -> Result<Bytes>) -> Result<Dist> {
        let mut merged: BTreeMap<Bytes, f64> = BTreeMap::new();
        for (v, p) in &self.outcomes {
            *merged.entry(f(v)?).or_insert(0.0) += p;
        }
        Ok(Dist {
            outcomes: merged.into_iter().collect(),
        })
    }
}

/// Sequence of sub-states under a lossless length-prefixed encoding, so a
/// protocol state can carry its own history. Decoding always recovers the
/// exact part list no matter what bytes the parts contain.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConcatState {
    parts: Vec<Bytes>,
}

impl ConcatState {
    pub fn empty() -> Self {
        ConcatState::default()
    }

    pub fn from_parts(parts: Vec<Bytes>) -> Self {
        ConcatState { parts }
    }

    pub fn parts(&self) -> &[Bytes] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn push(&mut self, part: Bytes) {
        self.parts.push(part);
    }

    pub fn last(&self) -> Option<&Bytes> {
        self.parts.last()
    }

    pub fn encode(&self) -> Bytes {
        let mut out = Vec::new();
        for part in &self.parts {
            out.extend_from_slice(&(part.len() as u32).to_le_bytes());
            out.extend_from_slice(part);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut parts = Vec::new();
        let mut i = 0usize;
        while i < bytes.len() {
            if i + 4 > bytes.len() {
                return Err(Error::Contract("truncated length prefix in state".into()));
            }
            let len = u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
            i += 4;
            if i + len > bytes.len() {
                return Err(Error::Contract("truncated part in state".into()));
            }
            parts.push(bytes[i..i + len].to_vec());
            i += len;
        }
        Ok(ConcatState { parts })
    }
}

/// A streaming protocol: an internal step folds one element into the state,
/// an output step maps the final state to the published answer.
pub struct PanProtocol {
    pub id: String,
    /// The privacy level this protocol claims for its states and output.
    pub epsilon: f64,
    pub initial_state: Bytes,
    step: StepFn,
    output: OutputFn,
}

impl PanProtocol {
    pub fn new(
        id: impl Into<String>,
        epsilon: f64,
        initial_state: Bytes,
        step: impl Fn(&[u8], usize) -> Result<Dist> + Send + Sync + 'static,
        output: impl Fn(&[u8]) -> Result<Dist> + Send + Sync + 'static,
    ) -> Self {
        PanProtocol {
            id: id.into(),
            epsilon,
            initial_state,
            step: Arc::new(step),
            output: Arc::new(output),
        }
    }

    pub fn step_dist(&self, state: &[u8], element: usize) -> Result<Dist> {
        (self.step)(state, element)
    }

    pub fn output_dist(&self, state: &[u8]) -> Result<Dist> {
        (self.output)(state)
    }
}

/// One randomizer: a per-element mechanism with a declared privacy level.
pub struct Randomizer {
    pub id: String,
    pub epsilon: f64,
    apply: ApplyFn,
}

impl Randomizer {
    pub fn new(
        id: impl Into<String>,
        epsilon: f64,
        apply: impl Fn(usize) -> Result<Dist> + Send + Sync + 'static,
    ) -> Self {
        Randomizer {
            id: id.into(),
            epsilon,
            apply: Arc::new(apply),
        }
    }

    pub fn apply(&self, element: usize) -> Result<Dist> {
        (self.apply)(element)
    }
}

/// A sequentially interactive local protocol: a rule that inspects the
/// transcript so far and picks the randomizer for the next element.
pub struct LocalProtocol {
    pub id: String,
    pub epsilon: f64,
    choose: ChooseFn,
}

impl LocalProtocol {
    pub fn new(
        id: impl Into<String>,
        epsilon: f64,
        choose: impl Fn(&Transcript) -> Result<Randomizer> + Send + Sync + 'static,
    ) -> Self {
        LocalProtocol {
            id: id.into(),
            epsilon,
            choose: Arc::new(choose),
        }
    }

    pub fn next_randomizer(&self, transcript: &Transcript) -> Result<Randomizer> {
        (self.choose)(transcript)
    }
}

/// The public record of a local protocol run: one `(randomizer id, message)`
/// pair per consumed element.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    entries: Vec<(String, Bytes)>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, randomizer_id: String, message: Bytes) {
        self.entries.push((randomizer_id, message));
    }

    pub fn entries(&self) -> &[(String, Bytes)] {
        &self.entries
    }

    /// The transcript with randomizer ids stripped, as a part list.
    pub fn messages(&self) -> Vec<Bytes> {
        self.entries.iter().map(|(_, m)| m.clone()).collect()
    }

    /// Encoded message list (the randomizer-free view of the transcript).
    pub fn encode_messages(&self) -> Bytes {
        ConcatState::from_parts(self.messages()).encode()
    }

    pub fn encode(&self) -> Bytes {
        let parts: Vec<Bytes> = self
            .entries
            .iter()
            .map(|(id, m)| {
                ConcatState::from_parts(vec![id.as_bytes().to_vec(), m.clone()]).encode()
            })
            .collect();
        ConcatState::from_parts(parts).encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let outer = ConcatState::decode(bytes)?;
        let mut entries = Vec::with_capacity(outer.len());
        for part in outer.parts() {
            let pair = ConcatState::decode(part)?;
            if pair.len() != 2 {
                return Err(Error::Contract("transcript entry must have two fields".into()));
            }
            let id = String::from_utf8(pair.parts()[0].clone())
                .map_err(|_| Error::Contract("randomizer id must be utf-8".into()))?;
            entries.push((id, pair.parts()[1].clone()));
        }
        Ok(Transcript { entries })
    }
}

/// Turn a protocol into one that keeps every past state: the new state
/// after `t` elements is the encoded list of the source protocol's states
/// through time `t`, and the output rule reads only the newest entry.
pub fn two_intrusion_to_one(source: PanProtocol) -> PanProtocol {
    let source = Arc::new(source);
    let for_step = source.clone();
    let for_output = source.clone();
    PanProtocol::new(
        format!("{}-history", source.id),
        source.epsilon,
        ConcatState::empty().encode(),
        move |state, element| {
            let parts = ConcatState::decode(state)?;
            let last = parts
                .last()
                .cloned()
                .unwrap_or_else(|| for_step.initial_state.clone());
            let next = for_step.step_dist(&last, element)?;
            Ok(next.map(|part| {
                let mut grown = parts.clone();
                grown.push(part.clone());
                grown.encode()
            }))
        },
        move |state| {
            let parts = ConcatState::decode(state)?;
            let last = parts
                .last()
                .cloned()
                .unwrap_or_else(|| for_output.initial_state.clone());
            for_output.output_dist(&last)
        },
    )
}

/// Turn an append-only streaming protocol into a local protocol: element
/// `t` is fed to the randomizer "current state -> newly appended part" and
/// the part becomes the transcript message. The source protocol must grow
/// its state by exactly one part per element; a step that rewrites history
/// is reported as a contract violation.
pub fn pan_to_local(source: PanProtocol) -> LocalProtocol {
    let source = Arc::new(source);
    let id = source.id.clone();
    let epsilon = source.epsilon;
    LocalProtocol::new(format!("{id}-local"), epsilon, move |transcript| {
        let state = ConcatState::from_parts(transcript.messages()).encode();
        let t_next = transcript.len() + 1;
        let inner = source.clone();
        Ok(Randomizer::new(
            format!("{}@{}", inner.id, t_next),
            inner.epsilon,
            move |element| {
                let prev = ConcatState::decode(&state)?;
                let next = inner.step_dist(&state, element)?;
                next.try_map(|grown_bytes| {
                    let grown = ConcatState::decode(grown_bytes)?;
                    if grown.len() != prev.len() + 1 || grown.parts()[..prev.len()] != *prev.parts()
                    {
                        return Err(Error::Contract(
                            "internal step must append exactly one part".into(),
                        ));
                    }
                    Ok(grown.parts().last().expect("appended part").clone())
                })
            },
        ))
    })
}

/// Turn a local protocol into a streaming protocol that stores the
/// transcript so far as its internal state and publishes it verbatim. The
/// state history is prefix-closed, so observing any number of intermediate
/// states reveals nothing beyond the final state.
pub fn local_to_pan(source: LocalProtocol) -> PanProtocol {
    let source = Arc::new(source);
    let id = source.id.clone();
    PanProtocol::new(
        format!("{id}-stream"),
        source.epsilon,
        Transcript::default().encode(),
        move |state, element| {
            let transcript = Transcript::decode(state)?;
            let randomizer = source.next_randomizer(&transcript)?;
            let messages = randomizer.apply(element)?;
            let rid = randomizer.id.clone();
            Ok(messages.map(|message| {
                let mut grown = transcript.clone();
                grown.push(rid.clone(), message.clone());
                grown.encode()
            }))
        },
        |state| Ok(Dist::point(state.to_vec())),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub state_digest: String,
    pub message: Option<String>,
    pub intruded: bool,
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub output: Bytes,
    /// `(time, state)` pairs captured at the requested intrusion times,
    /// immediately after the state update at that time.
    pub observed: Vec<(usize, Bytes)>,
    pub steps: Vec<StepRecord>,
}

/// Execute a streaming protocol over a stream, recording the state exactly
/// at the requested (1-based) intrusion times.
pub fn simulate<R: Rng + ?Sized>(
    protocol: &PanProtocol,
    stream: &[usize],
    intrusion_times: &[usize],
    rng: &mut R,
) -> Result<SimulationTrace> {
    for &t in intrusion_times {
        if t == 0 || t > stream.len() {
            return Err(Error::domain(format!(
                "intrusion time {t} outside stream of length {}",
                stream.len()
            )));
        }
    }
    let mut state = protocol.initial_state.clone();
    let mut observed = Vec::new();
    let mut steps = Vec::new();
    for (i, &element) in stream.iter().enumerate() {
        let t = i + 1;
        let prev_parts = ConcatState::decode(&state).map(|c| c.len()).unwrap_or(0);
        state = protocol.step_dist(&state, element)?.sample(rng);
        let intruded = intrusion_times.contains(&t);
        if intruded {
            observed.push((t, state.clone()));
        }
        let message = ConcatState::decode(&state).ok().and_then(|c| {
            if c.len() == prev_parts + 1 {
                c.last().map(|m| hex(m))
            } else {
                None
            }
        });
        steps.push(StepRecord {
            t,
            state_digest: format!("{:016x}", fnv1a64(&state)),
            message,
            intruded,
        });
    }
    let output = protocol.output_dist(&state)?.sample(rng);
    Ok(SimulationTrace {
        output,
        observed,
        steps,
    })
}

/// Execute a local protocol over a stream and return the transcript.
pub fn simulate_local<R: Rng + ?Sized>(
    protocol: &LocalProtocol,
    stream: &[usize],
    rng: &mut R,
) -> Result<Transcript> {
    let mut transcript = Transcript::default();
    for &element in stream {
        let randomizer = protocol.next_randomizer(&transcript)?;
        let message = randomizer.apply(element)?.sample(rng);
        transcript.push(randomizer.id.clone(), message);
    }
    Ok(transcript)
}

/// Write one JSON object per step to `path`.
pub fn export_trace_jsonl(trace: &SimulationTrace, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for step in &trace.steps {
        let line = serde_json::to_string(step)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Exact distribution of the protocol state after the first `t` elements
/// of `stream`, by folding the step distributions.
pub fn exact_state_distribution(
    protocol: &PanProtocol,
    stream: &[usize],
    t: usize,
) -> Result<BTreeMap<Bytes, f64>> {
    if t > stream.len() {
        return Err(Error::domain(format!(
            "prefix length {t} exceeds stream length {}",
            stream.len()
        )));
    }
    let mut dist: BTreeMap<Bytes, f64> = BTreeMap::new();
    dist.insert(protocol.initial_state.clone(), 1.0);
    for &element in &stream[..t] {
        let mut next: BTreeMap<Bytes, f64> = BTreeMap::new();
        for (state, p) in &dist {
            for (s2, q) in protocol.step_dist(state, element)?.outcomes() {
                *next.entry(s2.clone()).or_insert(0.0) += p * q;
            }
        }
        dist = next;
    }
    Ok(dist)
}

/// Exact distribution of the protocol's published output after consuming
/// the whole stream.
pub fn exact_output_distribution(
    protocol: &PanProtocol,
    stream: &[usize],
) -> Result<BTreeMap<Bytes, f64>> {
    let states = exact_state_distribution(protocol, stream, stream.len())?;
    let mut out: BTreeMap<Bytes, f64> = BTreeMap::new();
    for (state, p) in states {
        for (o, q) in protocol.output_dist(&state)?.outcomes() {
            *out.entry(o.clone()).or_insert(0.0) += p * q;
        }
    }
    Ok(out)
}

/// Exact distribution of the randomizer-free transcript (encoded message
/// list) after the first `t` elements.
pub fn exact_transcript_distribution(
    protocol: &LocalProtocol,
    stream: &[usize],
    t: usize,
) -> Result<BTreeMap<Bytes, f64>> {
    if t > stream.len() {
        return Err(Error::domain(format!(
            "prefix length {t} exceeds stream length {}",
            stream.len()
        )));
    }
    // carry full transcripts so the chooser can be adaptive
    let mut dist: BTreeMap<Bytes, f64> = BTreeMap::new();
    dist.insert(Transcript::default().encode(), 1.0);
    for &element in &stream[..t] {
        let mut next: BTreeMap<Bytes, f64> = BTreeMap::new();
        for (tr_bytes, p) in &dist {
            let transcript = Transcript::decode(tr_bytes)?;
            let randomizer = protocol.next_randomizer(&transcript)?;
            for (message, q) in randomizer.apply(element)?.outcomes() {
                let mut grown = transcript.clone();
                grown.push(randomizer.id.clone(), message.clone());
                *next.entry(grown.encode()).or_insert(0.0) += p * q;
            }
        }
        dist = next;
    }
    // strip randomizer ids
    let mut stripped: BTreeMap<Bytes, f64> = BTreeMap::new();
    for (tr_bytes, p) in dist {
        let transcript = Transcript::decode(&tr_bytes)?;
        *stripped.entry(transcript.encode_messages()).or_insert(0.0) += p;
    }
    Ok(stripped)
}

/// Total variation distance between two finitely supported distributions.
pub fn tv_between_maps(a: &BTreeMap<Bytes, f64>, b: &BTreeMap<Bytes, f64>) -> f64 {
    let mut keys: Vec<&Bytes> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Normalized counts from a sample of byte strings.
pub fn empirical_distribution<I: IntoIterator<Item = Bytes>>(samples: I) -> BTreeMap<Bytes, f64> {
    let mut counts: BTreeMap<Bytes, u64> = BTreeMap::new();
    let mut n = 0u64;
    for s in samples {
        *counts.entry(s).or_insert(0) += 1;
        n += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n as f64))
        .collect()
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// --- bundled toy protocols (the fixed test corpus) ---

/// Deterministic running-parity counter. Claims no privacy; used for
/// deterministic trace checks.
pub fn toy_counter() -> PanProtocol {
    PanProtocol::new(
        "counter",
        f64::INFINITY,
        vec![0u8],
        |state, element| {
            let parity = state.first().copied().unwrap_or(0) ^ (element as u8 & 1);
            Ok(Dist::point(vec![parity]))
        },
        |state| Ok(Dist::point(state.to_vec())),
    )
}

/// Binary randomized response over elements' low bits.
pub fn randomized_response_dist(bit: u8, epsilon: f64) -> Dist {
    let p_true = epsilon.exp() / (1.0 + epsilon.exp());
    Dist::new(vec![
        (vec![bit], p_true),
        (vec![bit ^ 1], 1.0 - p_true),
    ])
    .expect("valid bernoulli")
}

/// Streaming protocol whose state after each element is a fresh randomized
/// response for that element (earlier state is discarded).
pub fn toy_randomized_response(epsilon: f64) -> PanProtocol {
    PanProtocol::new(
        "randomized-response",
        epsilon,
        vec![0u8],
        move |_state, element| Ok(randomized_response_dist(element as u8 & 1, epsilon)),
        |state| Ok(Dist::point(state.to_vec())),
    )
}

/// Noninteractive local protocol: the same randomized-response randomizer
/// for every element.
pub fn toy_local_randomized_response(epsilon: f64) -> LocalProtocol {
    LocalProtocol::new("rr-local", epsilon, move |_transcript| {
        Ok(Randomizer::new("rr", epsilon, move |element| {
            Ok(randomized_response_dist(element as u8 & 1, epsilon))
        }))
    })
}

/// Sequentially interactive toy: after the first reply, the chooser picks
/// between the plain and the bit-flipped randomizer depending on the most
/// recent message. Every randomizer is an `epsilon`-randomizer.
pub fn toy_local_adaptive(epsilon: f64) -> LocalProtocol {
    LocalProtocol::new("adaptive-local", epsilon, move |transcript| {
        let flip = transcript
            .entries()
            .last()
            .map(|(_, m)| m.first().copied().unwrap_or(0) == 1)
            .unwrap_or(false);
        if flip {
            Ok(Randomizer::new("rr-flip", epsilon, move |element| {
                Ok(randomized_response_dist(element as u8 & 1 ^ 1, epsilon))
            }))
        } else {
            Ok(Randomizer::new("rr", epsilon, move |element| {
                Ok(randomized_response_dist(element as u8 & 1, epsilon))
            }))
        }
    })
}

/// The three bundled toys in their append-only streaming form, ready for
/// [`pan_to_local`].
pub fn toy_append_only_suite(epsilon: f64) -> Vec<PanProtocol> {
    vec![
        two_intrusion_to_one(toy_counter()),
        two_intrusion_to_one(toy_randomized_response(epsilon)),
        local_to_pan(toy_local_adaptive(epsilon)),
    ]
}
