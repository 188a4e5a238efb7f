use std::collections::{HashMap, VecDeque};

use crate::codec::{
    decode_sparse, encode_sparse, golomb_decode, golomb_encode_with, golomb_param, BitReader, BitStream,
    EncodedSparse, EncodedUpdate,
};
use crate::compress::{
    majority_vote, stc_compress, top_k_sparse, Densify, Residual, SparseTernaryUpdate, SparseUpdate,
};
use crate::error::{Error, Result};
use crate::tensor::FlatTensor;

use super::config::{FedConfig, Method};

/// Parameters both ends agree on before training starts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Session {
    pub method: Method,
    pub len: usize,
    pub bstar_up: u8,
    pub bstar_down: u8,
    pub p_up: f64,
    pub p_down: f64,
    pub signsgd_delta: f32,
}

impl Session {
    pub fn new(cfg: &FedConfig, len: usize) -> Result<Self> {
        let (bstar_up, bstar_down) = if cfg.method == Method::Stc {
            (golomb_param(cfg.p_up)?, golomb_param(cfg.p_down)?)
        } else {
            (1, 1)
        };
        Ok(Session {
            method: cfg.method,
            len,
            bstar_up,
            bstar_down,
            p_up: cfg.p_up,
            p_down: cfg.p_down,
            signsgd_delta: cfg.signsgd_delta,
        })
    }
}

fn protocol(e: Error) -> Error {
    match e {
        Error::Protocol(_) => e,
        other => Error::Protocol(other.to_string()),
    }
}

fn expect_exhausted(r: &BitReader<'_>) -> Result<()> {
    if r.remaining() != 0 {
        return Err(Error::Protocol(format!("{} trailing bits in message", r.remaining())));
    }
    Ok(())
}

/// What a client sends to the server after local training.
#[derive(Clone, Debug, PartialEq)]
pub enum Upload {
    /// Serialized compressed update (STC, top-k) or sign vector (signSGD).
    Bits(BitStream),
    /// Full 32-bit model.
    Dense(FlatTensor),
}

impl Upload {
    pub fn bits(&self) -> usize {
        match self {
            Upload::Bits(s) => s.len(),
            Upload::Dense(t) => 32 * t.len(),
        }
    }
}

pub(crate) fn encode_ternary(u: &SparseTernaryUpdate, bstar: u8) -> BitStream {
    golomb_encode_with(u, bstar).to_wire()
}

fn read_ternary(r: &mut BitReader<'_>, len: usize, bstar: u8) -> Result<FlatTensor> {
    let e = EncodedUpdate::read_wire(r, len, bstar)?;
    Ok(golomb_decode(&e)?.densify())
}

fn read_sparse(r: &mut BitReader<'_>, len: usize) -> Result<FlatTensor> {
    let e = EncodedSparse::read_wire(r, len)?;
    Ok(decode_sparse(&e)?.densify())
}

pub(crate) fn encode_signs(signs: &[i8]) -> BitStream {
    let mut s = BitStream::new();
    for &v in signs {
        s.push_bit(v < 0);
    }
    s
}

pub(crate) fn decode_signs(s: &BitStream, len: usize) -> Result<Vec<i8>> {
    if s.len() != len {
        return Err(Error::Protocol(format!("sign vector of {} bits for {len} parameters", s.len())));
    }
    Ok((0..len).map(|i| if s.bit(i) == Some(true) { -1 } else { 1 }).collect())
}

/// Decodes a single upload into the dense update (or model, for dense methods).
pub fn decode_upload(session: &Session, upload: &Upload) -> Result<FlatTensor> {
    let len = session.len;
    match (session.method, upload) {
        (Method::Stc, Upload::Bits(s)) => {
            let mut r = s.reader();
            let t = read_ternary(&mut r, len, session.bstar_up).map_err(protocol)?;
            expect_exhausted(&r)?;
            Ok(t)
        }
        (Method::TopK, Upload::Bits(s)) => {
            let mut r = s.reader();
            let t = read_sparse(&mut r, len).map_err(protocol)?;
            expect_exhausted(&r)?;
            Ok(t)
        }
        (Method::SignSgd, Upload::Bits(s)) => {
            let signs = decode_signs(s, len)?;
            Ok(FlatTensor::from(signs.into_iter().map(f32::from).collect::<Vec<_>>()))
        }
        (Method::FedAvg | Method::Baseline, Upload::Dense(t)) => {
            if t.len() != len {
                return Err(Error::Protocol(format!("dense upload of length {}", t.len())));
            }
            Ok(t.clone())
        }
        (m, _) => Err(Error::Protocol(format!("unexpected upload kind for {m}"))),
    }
}

/// A global update as it was applied and broadcast.
#[derive(Clone, Debug)]
struct LoggedUpdate {
    delta: FlatTensor,
    message: BitStream,
    votes: Option<Vec<i8>>,
}

/// Download sent to a client that last synchronized `s` rounds ago.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Already up to date.
    Empty,
    /// Serialized partial sum of the last `s` global updates.
    Partial { s: usize, message: BitStream },
    /// Full model, for dense methods or gaps beyond the cache horizon.
    Full(FlatTensor),
}

impl Payload {
    pub fn bits(&self) -> usize {
        match self {
            Payload::Empty => 0,
            Payload::Partial { message, .. } => message.len(),
            Payload::Full(t) => 32 * t.len(),
        }
    }
}

const TAG_STACKED: u64 = 0;
const TAG_SPARSE_SUM: u64 = 1;
const TAG_BITS: u32 = 8;

fn vote_width(s: usize) -> u32 {
    usize::BITS - s.leading_zeros()
}

/// Parameter-server state: global model, server residual and the log of
/// recent global updates used to serve partial sums.
#[derive(Clone, Debug)]
pub struct ServerState {
    session: Session,
    params: FlatTensor,
    residual: Residual,
    round: usize,
    horizon: usize,
    log: VecDeque<LoggedUpdate>,
    memo: HashMap<usize, Payload>,
}

/// Result of one server aggregation step.
#[derive(Clone, Debug)]
pub struct Aggregate {
    /// Mean of the decoded client updates, before server-side compression.
    /// For dense methods this is the mean of the uploaded models.
    pub mean: FlatTensor,
    /// Change applied to the global model.
    pub applied: FlatTensor,
}

impl ServerState {
    pub fn new(session: Session, params: FlatTensor, horizon: usize) -> Self {
        let len = params.len();
        ServerState {
            session,
            params,
            residual: Residual::zeros(len),
            round: 0,
            horizon,
            log: VecDeque::new(),
            memo: HashMap::new(),
        }
    }

    pub fn params(&self) -> &FlatTensor {
        &self.params
    }

    pub fn residual(&self) -> &FlatTensor {
        self.residual.acc()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Sum of the last `s` applied global updates, oldest first.
    pub fn partial_sum(&self, s: usize) -> Option<FlatTensor> {
        if s > self.log.len() {
            return None;
        }
        let mut sum = FlatTensor::zeros(self.params.len());
        for u in self.log.iter().skip(self.log.len() - s) {
            sum.add_assign(&u.delta).ok()?;
        }
        Some(sum)
    }

    /// Payload bringing a client from round `last_synced` to the current round.
    pub fn payload(&mut self, last_synced: usize) -> Result<Payload> {
        if last_synced > self.round {
            return Err(Error::Protocol(format!(
                "client synced at round {last_synced}, server is at {}",
                self.round
            )));
        }
        let s = self.round - last_synced;
        if s == 0 {
            return Ok(Payload::Empty);
        }
        if let Some(p) = self.memo.get(&s) {
            return Ok(p.clone());
        }
        let payload = if matches!(self.session.method, Method::FedAvg | Method::Baseline)
            || s > self.horizon
            || s > self.log.len()
        {
            Payload::Full(self.params.clone())
        } else {
            Payload::Partial {
                s,
                message: self.encode_partial(s)?,
            }
        };
        self.memo.insert(s, payload.clone());
        Ok(payload)
    }

    fn encode_partial(&self, s: usize) -> Result<BitStream> {
        let recent: Vec<&LoggedUpdate> = self.log.iter().skip(self.log.len() - s).collect();
        if self.session.method == Method::SignSgd {
            let width = vote_width(s);
            let mut out = BitStream::new();
            for j in 0..self.session.len {
                let positive = recent
                    .iter()
                    .filter(|u| u.votes.as_ref().is_some_and(|v| v[j] > 0))
                    .count();
                out.push_bits(positive as u64, width);
            }
            return Ok(out);
        }
        if s == 1 {
            return Ok(recent[0].message.clone());
        }
        let stacked_bits: usize = recent.iter().map(|u| u.message.len()).sum();
        let sum = self.partial_sum(s).ok_or_else(|| Error::Protocol("partial sum unavailable".into()))?;
        let sparse = encode_sparse(&SparseUpdate::from_dense(&sum)).to_wire();
        let mut out = BitStream::new();
        if stacked_bits <= sparse.len() {
            out.push_bits(TAG_STACKED, TAG_BITS);
            for u in &recent {
                out.extend(&u.message);
            }
        } else {
            out.push_bits(TAG_SPARSE_SUM, TAG_BITS);
            out.extend(&sparse);
        }
        Ok(out)
    }

    /// Aggregates the decoded uploads (ascending client order), compresses
    /// the result for broadcast and applies it. Returns what was applied.
    pub fn aggregate(&mut self, decoded: &[FlatTensor]) -> Result<Aggregate> {
        if decoded.is_empty() {
            return Err(Error::Protocol("round without participants".into()));
        }
        let refs: Vec<&FlatTensor> = decoded.iter().collect();
        let len = self.session.len;
        let (mean, logged) = match self.session.method {
            Method::Stc => {
                let mean = FlatTensor::mean_of(&refs)?;
                let p = self.session.p_down;
                let update = self.residual.apply(&mean, |t| stc_compress(t, p))?;
                let message = encode_ternary(&update, self.session.bstar_down);
                let mut r = message.reader();
                let delta = read_ternary(&mut r, len, self.session.bstar_down)?;
                (mean, LoggedUpdate { delta, message, votes: None })
            }
            Method::TopK => {
                let mean = FlatTensor::mean_of(&refs)?;
                let p = self.session.p_down;
                let update = self.residual.apply(&mean, |t| top_k_sparse(t, p))?;
                let message = encode_sparse(&update).to_wire();
                let delta = update.densify();
                (mean, LoggedUpdate { delta, message, votes: None })
            }
            Method::SignSgd => {
                let votes: Vec<Vec<i8>> = decoded
                    .iter()
                    .map(|t| t.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect())
                    .collect();
                let mean = FlatTensor::mean_of(&refs)?;
                let vote = majority_vote(&votes)?;
                let step = self.session.signsgd_delta;
                let delta = FlatTensor::from(vote.iter().map(|&v| step * f32::from(v)).collect::<Vec<_>>());
                let message = encode_signs(&vote);
                (mean, LoggedUpdate { delta, message, votes: Some(vote) })
            }
            Method::FedAvg | Method::Baseline => {
                let mean = FlatTensor::mean_of(&refs)?;
                let applied = mean.sub(&self.params)?;
                self.params = mean.clone();
                self.finish_round(None);
                return Ok(Aggregate { mean, applied });
            }
        };
        self.params.add_assign(&logged.delta)?;
        let applied = logged.delta.clone();
        self.finish_round(Some(logged));
        Ok(Aggregate { mean, applied })
    }

    fn finish_round(&mut self, logged: Option<LoggedUpdate>) {
        if let Some(u) = logged {
            if self.horizon > 0 {
                self.log.push_back(u);
                while self.log.len() > self.horizon {
                    self.log.pop_front();
                }
            }
        }
        self.memo.clear();
        self.round += 1;
    }
}

/// Applies a download to a client's copy of the global model.
pub fn apply_payload(session: &Session, model: &mut FlatTensor, payload: &Payload) -> Result<()> {
    let len = session.len;
    match payload {
        Payload::Empty => Ok(()),
        Payload::Full(w) => {
            if w.len() != len {
                return Err(Error::Protocol(format!("full model of length {}", w.len())));
            }
            model.clone_from(w);
            Ok(())
        }
        Payload::Partial { s, message } => {
            let mut r = message.reader();
            match session.method {
                Method::SignSgd => {
                    let width = vote_width(*s);
                    let step = session.signsgd_delta;
                    for m in model.iter_mut() {
                        let positive = r.read_bits(width).map_err(protocol)? as i64;
                        if positive > *s as i64 {
                            return Err(Error::Protocol("vote count exceeds gap".into()));
                        }
                        *m += step * (2 * positive - *s as i64) as f32;
                    }
                }
                Method::Stc | Method::TopK if *s == 1 => {
                    let delta = read_message(session, &mut r)?;
                    model.add_assign(&delta)?;
                }
                Method::Stc | Method::TopK => match r.read_bits(TAG_BITS).map_err(protocol)? {
                    TAG_STACKED => {
                        for _ in 0..*s {
                            let delta = read_message(session, &mut r)?;
                            model.add_assign(&delta)?;
                        }
                    }
                    TAG_SPARSE_SUM => {
                        let delta = read_sparse(&mut r, len).map_err(protocol)?;
                        model.add_assign(&delta)?;
                    }
                    tag => return Err(Error::Protocol(format!("unknown payload tag {tag}"))),
                },
                m => return Err(Error::Protocol(format!("{m} has no partial-sum payloads"))),
            }
            expect_exhausted(&r)
        }
    }
}

fn read_message(session: &Session, r: &mut BitReader<'_>) -> Result<FlatTensor> {
    match session.method {
        Method::Stc => read_ternary(r, session.len, session.bstar_down).map_err(protocol),
        _ => read_sparse(r, session.len).map_err(protocol),
    }
}
