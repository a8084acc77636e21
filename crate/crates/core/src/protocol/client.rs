use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::Duration;

use rand::Rng;

use super::wire::{read_frame, write_frame, MsgType, Received, WireMessage};
use crate::error::{Error, Result};
use crate::mixer::{naive_unmix, tta_decode, tta_encode, AlphaBounds, MixKey, ReferencePool};
use crate::models::{unmix_net_apply, OracleAccess, UnmixNet};
use crate::scalar::Scalar;
use crate::tensor::{extract_label_patches, extract_patches, reassemble, LabelField, Patch, PatchGrid, Volume};

#[derive(Debug, Clone, Copy)]
pub enum Decoder<'a, T: Scalar> {
    Naive,
    Learned(&'a UnmixNet<T>),
}

impl<T: Scalar> Decoder<'_, T> {
    pub fn decode(&self, y_mix_hat: &LabelField<T>, y_ref: &LabelField<T>, alpha: f64, alpha_min: f64) -> Result<LabelField<T>> {
        match self {
            Self::Naive => naive_unmix(y_mix_hat, y_ref, alpha, alpha_min),
            Self::Learned(net) => unmix_net_apply(net, y_mix_hat, y_ref, alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientOptions {
    /// Wait for any response before resending what is still missing.
    pub timeout: Duration,
    pub retries: usize,
    pub alpha_min: f64,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(30), retries: 3, alpha_min: AlphaBounds::default().min }
    }
}

/// Client-side state for one volume. The keys never leave this struct:
/// only mixtures are ever placed in outgoing messages.
#[derive(Debug, Clone)]
pub struct ClientSession<T: Scalar = f32> {
    session_id: u64,
    grid: PatchGrid,
    keys: Vec<MixKey<T>>,
    /// patch index on the wire -> (grid patch, reference index)
    pending: BTreeMap<u32, (usize, usize)>,
}

impl<T: Scalar> ClientSession<T> {
    /// One key per grid patch; every key must hold the same number of references.
    pub fn new(session_id: u64, grid: PatchGrid, keys: Vec<MixKey<T>>) -> Result<Self> {
        if keys.len() != grid.len() {
            return Err(Error::config(format!("{} keys for {} patches", keys.len(), grid.len())));
        }
        let k = keys.first().map_or(0, MixKey::len);
        if k == 0 || keys.iter().any(|key| key.len() != k) {
            return Err(Error::config("every patch needs the same non-zero number of references"));
        }
        if keys.iter().any(|key| key.references()[0].image.dims() != grid.patch_dims()) {
            return Err(Error::dim("reference patches do not match the grid"));
        }
        Ok(Self { session_id, grid, keys, pending: BTreeMap::new() })
    }

    /// Draws a fresh key per patch from `pool`, all sharing one alpha.
    pub fn draw<R: Rng>(rng: &mut R, grid: PatchGrid, pool: &ReferencePool<T>, alpha: f64, bounds: AlphaBounds, k: usize) -> Result<Self> {
        let session_id = rng.random();
        let keys = (0..grid.len())
            .map(|_| pool.draw_key(rng, grid.patch_dims(), alpha, bounds, k))
            .collect::<Result<Vec<_>>>()?;
        Self::new(session_id, grid, keys)
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn keys(&self) -> &[MixKey<T>] {
        &self.keys
    }

    pub fn tta_count(&self) -> usize {
        self.keys[0].len()
    }

    fn wire_index(&self, patch: usize, reference: usize) -> u32 {
        (patch * self.tta_count() + reference) as u32
    }

    /// Encodes every (patch, reference) mixture as a request.
    pub fn requests(&mut self, vol: &Volume<T>) -> Result<Vec<WireMessage>> {
        let patches = extract_patches(vol, &self.grid)?;
        self.pending.clear();
        let mut out = Vec::with_capacity(patches.len() * self.tta_count());
        for (p, (patch, key)) in patches.iter().zip(&self.keys).enumerate() {
            for pair in tta_encode(&patch.data, key)? {
                let idx = self.wire_index(p, pair.reference_index);
                debug_assert!(key.references().iter().all(|r| r.image != pair.x_mix || pair.alpha == 0.0));
                self.pending.insert(idx, (p, pair.reference_index));
                out.push(WireMessage::segment_request(self.session_id, idx, &pair.x_mix));
            }
        }
        Ok(out)
    }

    /// Ground truth for an oracle backend, keyed by the same mixtures `requests` sends.
    pub fn oracle_entries(&self, vol: &Volume<T>, labels: &LabelField<T>) -> Result<Vec<(Volume<T>, OracleAccess<T>)>> {
        let patches = extract_patches(vol, &self.grid)?;
        let label_patches = extract_label_patches(labels, &self.grid)?;
        let mut out = Vec::new();
        for ((patch, lab), key) in patches.iter().zip(&label_patches).zip(&self.keys) {
            for (pair, r) in tta_encode(&patch.data, key)?.into_iter().zip(key.references()) {
                let access = OracleAccess { y_target: lab.data.clone(), y_ref: r.labels.clone(), alpha: key.alpha() };
                out.push((pair.x_mix, access));
            }
        }
        Ok(out)
    }

    /// Unmixes each response with its reference, averages per patch and reassembles.
    pub fn decode(&self, responses: &BTreeMap<u32, LabelField<T>>, decoder: Decoder<'_, T>, alpha_min: f64) -> Result<LabelField<T>> {
        let k = self.tta_count();
        let mut patches = Vec::with_capacity(self.grid.len());
        for (p, (origin, key)) in self.grid.origins().iter().zip(&self.keys).enumerate() {
            let preds = (0..k)
                .map(|r| {
                    let y = responses
                        .get(&self.wire_index(p, r))
                        .ok_or_else(|| Error::Session(format!("no response for patch {p} reference {r}")))?;
                    decoder.decode(y, &key.references()[r].labels, key.alpha(), alpha_min)
                })
                .collect::<Result<Vec<_>>>()?;
            patches.push(Patch { origin: *origin, data: tta_decode(&preds)? });
        }
        reassemble(&patches, self.grid.parent_dims())
    }
}

fn connect(addr: SocketAddr, opts: &ClientOptions) -> Result<TcpStream> {
    let mut last = None;
    for attempt in 0..=opts.retries {
        match TcpStream::connect_timeout(&addr, opts.timeout) {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::warn!("connect attempt {} to {addr} failed: {e}", attempt + 1);
                last = Some(e);
                thread::sleep(Duration::from_millis(50 << attempt.min(4)));
            }
        }
    }
    Err(Error::Session(format!("could not reach {addr}: {}", last.expect("at least one attempt"))))
}

/// Sends `requests` over one connection and collects exactly one response per patch index.
/// Missing answers are re-requested after each timeout, up to `opts.retries` times.
pub fn exchange<T: Scalar>(addr: SocketAddr, session_id: u64, requests: &[WireMessage], opts: &ClientOptions) -> Result<BTreeMap<u32, LabelField<T>>> {
    let stream = connect(addr, opts)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(opts.timeout))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    write_frame(&mut writer, &WireMessage::hello(session_id))?;
    writer.flush()?;
    match read_frame(&mut reader)? {
        Received::Message(m) if m.msg_type == MsgType::Hello && m.session_id == session_id => {}
        other => return Err(Error::Session(format!("handshake failed: {other:?}"))),
    }
    let by_index: BTreeMap<u32, &WireMessage> = requests.iter().map(|m| (m.patch_index, m)).collect();
    let mut answers = BTreeMap::new();
    let mut failures: BTreeMap<u32, usize> = BTreeMap::new();
    let mut round = 0;
    let mut outstanding: Vec<&WireMessage> = by_index.values().copied().collect();
    while !outstanding.is_empty() {
        thread::scope(|s| -> Result<()> {
            let batch = &outstanding;
            let stream = &stream;
            let sender = s.spawn(move || -> Result<()> {
                let mut w = BufWriter::new(stream.try_clone()?);
                for m in batch {
                    write_frame(&mut w, m)?;
                }
                w.flush()?;
                Ok(())
            });
            let mut expected = batch.len();
            while expected > 0 {
                let msg = match read_frame(&mut reader) {
                    Ok(Received::Message(m)) => m,
                    Ok(Received::Malformed(e)) => return Err(e.into()),
                    Ok(Received::Closed) => return Err(Error::Session("server closed the connection".into())),
                    Err(Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                    Err(e) => return Err(e),
                };
                if msg.session_id != session_id {
                    return Err(Error::Session(format!("response for foreign session {}", msg.session_id)));
                }
                match msg.msg_type {
                    MsgType::SegmentResponse if by_index.contains_key(&msg.patch_index) => {
                        if !answers.contains_key(&msg.patch_index) {
                            answers.insert(msg.patch_index, msg.labels::<T>()?);
                            expected -= 1;
                        }
                    }
                    MsgType::Error => {
                        let info = msg.error_info();
                        log::warn!("server error for patch {}: {info:?}", msg.patch_index);
                        let n = failures.entry(msg.patch_index).or_insert(0);
                        *n += 1;
                        if *n > opts.retries {
                            return Err(Error::Session(format!("patch {} failed: {info:?}", msg.patch_index)));
                        }
                        expected -= 1;
                    }
                    other => return Err(Error::Session(format!("unexpected {other:?} for patch {}", msg.patch_index))),
                }
            }
            sender.join().expect("sender thread panicked")
        })?;
        outstanding.retain(|m| !answers.contains_key(&m.patch_index));
        if !outstanding.is_empty() {
            round += 1;
            if round > opts.retries {
                return Err(Error::Session(format!("{} requests unanswered after {} retries", outstanding.len(), opts.retries)));
            }
            log::warn!("retrying {} requests (round {round})", outstanding.len());
        }
    }
    let _ = write_frame(&mut writer, &WireMessage::bye(session_id)).and_then(|_| Ok(writer.flush()?));
    Ok(answers)
}

/// Full client pipeline: extract, mix with every reference, query the server,
/// unmix, average over references and reassemble.
pub fn client_segment_volume<T: Scalar>(
    vol: &Volume<T>,
    session: &mut ClientSession<T>,
    server: SocketAddr,
    decoder: Decoder<'_, T>,
    opts: &ClientOptions,
) -> Result<LabelField<T>> {
    let requests = session.requests(vol)?;
    let responses = exchange(server, session.session_id, &requests, opts)?;
    if responses.len() != session.pending.len() || session.pending.keys().any(|k| !responses.contains_key(k)) {
        return Err(Error::Session("responses do not match requests".into()));
    }
    session.decode(&responses, decoder, opts.alpha_min)
}
