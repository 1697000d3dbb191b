//! Track-to-track fusion.
//!
//! Local tracks are combined by information weighting,
//!
//! ```text
//! P_F = (Σ P_s⁻¹)⁻¹,   x_F = P_F Σ P_s⁻¹ x_s
//! ```
//!
//! which assumes the local estimation errors are uncorrelated; no
//! cross-covariance terms are carried. Tracks travel from sensor sites to the
//! fusion site as fixed-size frames over any byte stream (pipe, socket,
//! in-memory buffer).
//!
//! Frame layout, little-endian, 69 bytes:
//!
//! | offset | size | field                       |
//! |-------:|-----:|-----------------------------|
//! | 0      | 4    | magic `"TTF1"`              |
//! | 4      | 1    | version (`1`)               |
//! | 5      | 4    | sensor_id `u32`             |
//! | 9      | 8    | seq `u64`                   |
//! | 17     | 8    | t `f64` (s)                 |
//! | 25     | 8    | d `f64` (mm)                |
//! | 33     | 8    | v `f64` (mm/s)              |
//! | 41     | 8    | p11 `f64`                   |
//! | 49     | 8    | p12 `f64`                   |
//! | 57     | 8    | p22 `f64`                   |
//! | 65     | 4    | CRC-32 (IEEE) of bytes 0..65 |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::estimation::{predict, Covariance2, KinematicState, LocalFilter, MeasurementModel, ProcessModel};

/// Tracks closer than this (s) count as simultaneous.
pub const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("no tracks to fuse")]
    NoTracks,
    #[error("sensor {sensor_id}: covariance is singular or not positive definite (det = {det:e})")]
    SingularCovariance { sensor_id: u32, det: f64 },
    #[error("sensor {sensor_id}: track time {t} differs from {reference} by more than {TIME_TOLERANCE} s; align tracks first")]
    Misaligned { sensor_id: u32, t: f64, reference: f64 },
    #[error("sensor {sensor_id}: cannot align backwards from t = {from} to t = {to}")]
    BackwardAlignment { sensor_id: u32, from: f64, to: f64 },
    #[error("fused information matrix is singular")]
    SingularInformation,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("short frame: got {got} of {FRAME_LEN} bytes")]
    Short { got: usize },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("non-finite value in field `{0}`")]
    NonFinite(&'static str),
    #[error("covariance invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Estimate produced at one sensor site.
///
/// `state.t` mirrors `t` and `state.k` mirrors `seq`; both are restored from
/// the frame header on decode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrack {
    pub sensor_id: u32,
    pub seq: u64,
    pub t: f64,
    pub state: KinematicState,
    pub cov: Covariance2,
}

impl LocalTrack {
    pub fn new(sensor_id: u32, seq: u64, state: KinematicState, cov: Covariance2) -> Self {
        let state = KinematicState { k: seq, ..state };
        Self { sensor_id, seq, t: state.t, state, cov }
    }

    fn check_invertible(&self) -> Result<(), FusionError> {
        let det = self.cov.det();
        if self.cov.p11 > 0.0 && self.cov.p22 > 0.0 && det > 0.0 && det.is_finite() {
            Ok(())
        } else {
            Err(FusionError::SingularCovariance { sensor_id: self.sensor_id, det })
        }
    }
}

/// Global estimate at one fusion instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTrack {
    pub t: f64,
    pub state: KinematicState,
    pub cov: Covariance2,
    pub contributors: Vec<u32>,
}

impl FusedTrack {
    /// Re-wraps the fused estimate as a local track, e.g. to feed it into a
    /// further fusion stage.
    pub fn as_local(&self, sensor_id: u32, seq: u64) -> LocalTrack {
        LocalTrack::new(sensor_id, seq, self.state, self.cov)
    }

    /// `P_s − P_F ⪰ 0` for the given contributor covariance.
    pub fn dominated_by(&self, cov: &Covariance2, rel_tol: f64) -> bool {
        let diff = cov.sub(&self.cov);
        let (lo, _) = diff.eigenvalues();
        lo >= -rel_tol * cov.scale().max(f64::MIN_POSITIVE)
    }
}

/// Information-weighted fusion of time-aligned tracks.
pub fn fuse(tracks: &[LocalTrack]) -> Result<FusedTrack, FusionError> {
    let first = tracks.first().ok_or(FusionError::NoTracks)?;
    let t_ref = first.t;
    let mut info = Covariance2::ZERO;
    let (mut iy1, mut iy2) = (0.0, 0.0);
    for tr in tracks {
        tr.check_invertible()?;
        if (tr.t - t_ref).abs() > TIME_TOLERANCE {
            return Err(FusionError::Misaligned { sensor_id: tr.sensor_id, t: tr.t, reference: t_ref });
        }
        let inv = tr
            .cov
            .inverse()
            .ok_or(FusionError::SingularCovariance { sensor_id: tr.sensor_id, det: tr.cov.det() })?;
        info = info.add(&inv);
        let (a, b) = inv.mul_vec(tr.state.d, tr.state.v);
        iy1 += a;
        iy2 += b;
    }
    let cov = info.inverse().ok_or(FusionError::SingularInformation)?;
    let (d, v) = cov.mul_vec(iy1, iy2);
    Ok(FusedTrack {
        t: t_ref,
        state: KinematicState { d, v, k: first.state.k, t: t_ref },
        cov,
        contributors: tracks.iter().map(|t| t.sensor_id).collect(),
    })
}

/// Propagates a track forward to `t_target` with the constant-velocity
/// prediction step.
pub fn align(track: &LocalTrack, t_target: f64, model: &ProcessModel) -> Result<LocalTrack, FusionError> {
    let dt = t_target - track.t;
    if dt < 0.0 {
        return Err(FusionError::BackwardAlignment { sensor_id: track.sensor_id, from: track.t, to: t_target });
    }
    if dt == 0.0 {
        return Ok(*track);
    }
    let (mut state, cov) = predict(&track.state, &track.cov, &model.over(dt));
    state.k = track.state.k;
    state.t = t_target;
    Ok(LocalTrack { t: t_target, state, cov, ..*track })
}

pub const FRAME_LEN: usize = 69;
pub const FRAME_MAGIC: [u8; 4] = *b"TTF1";
pub const FRAME_VERSION: u8 = 1;

/// Serialises a track. No validation happens here; [`decode_frame`] is the
/// gatekeeper.
pub fn encode_frame(track: &LocalTrack) -> [u8; FRAME_LEN] {
    let mut buf = [0u8; FRAME_LEN];
    buf[0..4].copy_from_slice(&FRAME_MAGIC);
    buf[4] = FRAME_VERSION;
    buf[5..9].copy_from_slice(&track.sensor_id.to_le_bytes());
    buf[9..17].copy_from_slice(&track.seq.to_le_bytes());
    let fields = [track.t, track.state.d, track.state.v, track.cov.p11, track.cov.p12, track.cov.p22];
    for (i, f) in fields.iter().enumerate() {
        let o = 17 + 8 * i;
        buf[o..o + 8].copy_from_slice(&f.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf[..65]);
    buf[65..69].copy_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_frame(bytes: &[u8]) -> Result<LocalTrack, FrameError> {
    if bytes.len() < FRAME_LEN {
        return Err(FrameError::Short { got: bytes.len() });
    }
    let bytes = &bytes[..FRAME_LEN];
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if bytes[4] != FRAME_VERSION {
        return Err(FrameError::Version(bytes[4]));
    }
    let stored = u32::from_le_bytes(bytes[65..69].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..65]);
    if stored != computed {
        return Err(FrameError::Checksum { stored, computed });
    }
    let sensor_id = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    let seq = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    const NAMES: [&str; 6] = ["t", "d", "v", "p11", "p12", "p22"];
    let mut f = [0.0f64; 6];
    for i in 0..6 {
        let o = 17 + 8 * i;
        f[i] = f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if !f[i].is_finite() {
            return Err(FrameError::NonFinite(NAMES[i]));
        }
    }
    let [t, d, v, p11, p12, p22] = f;
    let cov = Covariance2::new(p11, p12, p22);
    if !(p11 > 0.0) || !(p22 > 0.0) {
        return Err(FrameError::Invariant(format!("non-positive variance (p11 = {p11}, p22 = {p22})")));
    }
    if !(cov.det() > 0.0) {
        return Err(FrameError::Invariant(format!("singular covariance (det = {:e})", cov.det())));
    }
    Ok(LocalTrack {
        sensor_id,
        seq,
        t,
        state: KinematicState { d, v, k: seq, t },
        cov,
    })
}

/// Writes one frame.
pub fn write_frame<W: Write>(w: &mut W, track: &LocalTrack) -> io::Result<()> {
    w.write_all(&encode_frame(track))
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<LocalTrack>, FrameError> {
    let mut buf = [0u8; FRAME_LEN];
    let mut got = 0;
    while got < FRAME_LEN {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    match got {
        0 => Ok(None),
        FRAME_LEN => decode_frame(&buf).map(Some),
        n => Err(FrameError::Short { got: n }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Fusion tick rate, Hz.
    pub rate: f64,
    /// A sensor whose latest frame is older than this many tick intervals is
    /// left out of the tick.
    pub staleness_ticks: f64,
    pub model: ProcessModel,
}

impl FusionConfig {
    pub fn new(rate: f64, model: ProcessModel) -> Self {
        Self { rate, staleness_ticks: 3.0, model }
    }

    fn tick_time(&self, j: i64) -> f64 {
        j as f64 / self.rate
    }

    fn staleness(&self) -> f64 {
        self.staleness_ticks / self.rate
    }
}

/// What happened at one fusion tick.
#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    Fused(FusedTrack),
    /// Every sensor was stale or silent.
    Gap { t: f64 },
    /// A sensor delivered a track the fuser refused.
    Rejected { t: f64, error: FusionError },
}

impl TickOutcome {
    pub fn fused(&self) -> Option<&FusedTrack> {
        match self {
            TickOutcome::Fused(f) => Some(f),
            _ => None,
        }
    }
}

struct Slot<R> {
    reader: R,
    latest: Option<LocalTrack>,
    pending: Option<LocalTrack>,
    done: bool,
}

impl<R: Read> Slot<R> {
    /// Pulls frames until one lies beyond `t`; the last one at or before `t`
    /// becomes `latest`.
    fn advance_to(&mut self, t: f64) -> Result<(), FrameError> {
        loop {
            if let Some(p) = self.pending {
                if p.t <= t + TIME_TOLERANCE {
                    self.latest = Some(p);
                    self.pending = None;
                } else {
                    return Ok(());
                }
            }
            if self.done {
                return Ok(());
            }
            match read_frame(&mut self.reader)? {
                Some(tr) => self.pending = Some(tr),
                None => self.done = true,
            }
        }
    }

    fn next_time(&mut self) -> Result<Option<f64>, FrameError> {
        if self.pending.is_none() && !self.done {
            match read_frame(&mut self.reader)? {
                Some(tr) => self.pending = Some(tr),
                None => self.done = true,
            }
        }
        Ok(self.pending.map(|p| p.t))
    }
}

/// Central fusion site reading N framed streams.
///
/// Ticks fall on the grid `j / rate`. At each tick every stream is read up to
/// the tick time; the latest frame of each non-stale sensor is aligned to the
/// tick and the aligned set is fused. Iteration ends at the first tick after
/// the last frame of the last stream.
///
/// Streams are read with blocking reads, one stream at a time, so producers
/// on other threads must each own their writer.
pub struct FusionLoop<R> {
    slots: Vec<Slot<R>>,
    cfg: FusionConfig,
    next_tick: Option<i64>,
    seq: u64,
}

impl<R: Read> FusionLoop<R> {
    pub fn new(streams: Vec<R>, cfg: FusionConfig) -> Self {
        let slots = streams
            .into_iter()
            .map(|reader| Slot { reader, latest: None, pending: None, done: false })
            .collect();
        Self { slots, cfg, next_tick: None, seq: 0 }
    }

    fn first_tick(&mut self) -> Result<Option<i64>, FrameError> {
        let mut earliest: Option<f64> = None;
        for s in &mut self.slots {
            if let Some(t) = s.next_time()? {
                earliest = Some(earliest.map_or(t, |e: f64| e.min(t)));
            }
        }
        Ok(earliest.map(|t| ((t - TIME_TOLERANCE) * self.cfg.rate).ceil() as i64))
    }

    fn tick(&mut self, j: i64) -> Result<Option<TickOutcome>, FrameError> {
        let t = self.cfg.tick_time(j);
        for s in &mut self.slots {
            s.advance_to(t)?;
        }
        // Once every stream has ended, stop at the first tick past the last frame.
        let all_done = self.slots.iter().all(|s| {
            s.done && s.pending.is_none() && s.latest.is_none_or(|l| l.t < t - TIME_TOLERANCE)
        });
        if all_done {
            return Ok(None);
        }
        let fresh: Vec<LocalTrack> = self
            .slots
            .iter()
            .filter_map(|s| s.latest)
            .filter(|tr| t - tr.t <= self.cfg.staleness() + TIME_TOLERANCE)
            .collect();
        if fresh.is_empty() {
            return Ok(Some(TickOutcome::Gap { t }));
        }
        let mut aligned = Vec::with_capacity(fresh.len());
        for tr in &fresh {
            match align(tr, t.max(tr.t), &self.cfg.model) {
                Ok(a) => aligned.push(LocalTrack { t, state: KinematicState { t, ..a.state }, ..a }),
                Err(error) => return Ok(Some(TickOutcome::Rejected { t, error })),
            }
        }
        let out = match fuse(&aligned) {
            Ok(mut f) => {
                f.state.k = self.seq;
                self.seq += 1;
                TickOutcome::Fused(f)
            }
            Err(error) => TickOutcome::Rejected { t, error },
        };
        Ok(Some(out))
    }
}

impl<R: Read> Iterator for FusionLoop<R> {
    type Item = Result<TickOutcome, FrameError>;

    fn next(&mut self) -> Option<Self::Item> {
        let j = match self.next_tick {
            Some(j) => j,
            None => match self.first_tick() {
                Ok(Some(j)) => j,
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            },
        };
        self.next_tick = Some(j + 1);
        self.tick(j).transpose()
    }
}

/// Convenience wrapper: runs the loop to completion.
pub fn fusion_loop<R: Read>(streams: Vec<R>, cfg: FusionConfig) -> Result<Vec<TickOutcome>, FrameError> {
    FusionLoop::new(streams, cfg).collect()
}

/// A sensor site: runs its local filter on raw samples and ships every
/// estimate as a frame.
pub struct SensorSite<W> {
    filter: LocalFilter,
    out: W,
    seq: u64,
}

impl<W: Write> SensorSite<W> {
    pub fn new(process: ProcessModel, meas: MeasurementModel, out: W) -> Self {
        Self { filter: LocalFilter::new(process, meas), out, seq: 0 }
    }

    /// Filters one sample and emits the resulting track. Returns `Ok(None)`
    /// while the filter has not been initialised yet.
    pub fn push(&mut self, t: f64, z: Option<f64>) -> io::Result<Option<LocalTrack>> {
        let Some(step) = self.filter.step(t, z) else {
            return Ok(None);
        };
        let tr = LocalTrack::new(self.filter.meas.sensor_id, self.seq, KinematicState { t, ..step.state }, step.cov);
        self.seq += 1;
        write_frame(&mut self.out, &tr)?;
        Ok(Some(tr))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Raw samples for one sensor site.
#[derive(Debug, Clone)]
pub struct SiteInput {
    pub meas: MeasurementModel,
    pub process: ProcessModel,
    /// `(t, z)`; `None` marks a dropped frame.
    pub samples: Vec<(f64, Option<f64>)>,
}

/// Runs every site on its own thread, connected to the fusion site through
/// OS pipes, and collects the fused output.
pub fn run_threaded(sites: Vec<SiteInput>, cfg: FusionConfig) -> Result<Vec<TickOutcome>, FrameError> {
    let mut readers = Vec::with_capacity(sites.len());
    let mut handles = Vec::with_capacity(sites.len());
    for site in sites {
        let (reader, writer) = io::pipe()?;
        readers.push(reader);
        handles.push(std::thread::spawn(move || -> io::Result<()> {
            let mut s = SensorSite::new(site.process, site.meas, io::BufWriter::new(writer));
            for (t, z) in site.samples {
                s.push(t, z)?;
            }
            s.into_inner().flush()
        }));
    }
    // The pipe buffer is finite, so the fusion side must drain concurrently.
    // Reading one stream at a time would deadlock, hence buffer each stream on
    // its own thread first.
    let drained: Vec<std::thread::JoinHandle<io::Result<Vec<u8>>>> = readers
        .into_iter()
        .map(|mut r| {
            std::thread::spawn(move || {
                let mut buf = Vec::new();
                r.read_to_end(&mut buf)?;
                Ok(buf)
            })
        })
        .collect();
    let mut streams = Vec::with_capacity(drained.len());
    for h in drained {
        streams.push(io::Cursor::new(h.join().map_err(|_| io::Error::other("reader thread panicked"))??));
    }
    for h in handles {
        h.join().map_err(|_| io::Error::other("sensor thread panicked"))??;
    }
    fusion_loop(streams, cfg)
}
