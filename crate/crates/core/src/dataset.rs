//! Labeled frame datasets: sweep specifications, generation and a streaming
//! binary file format.
//!
//! File layout (little-endian): 8-byte magic, u32 version, u32 frame width,
//! u64 record count, u8 clock kind and f64 clock parameter, then fixed-size
//! records. Each record stores its frame, the packed 64-bit allocation, the
//! physical labels, the generation seed, the family and auxiliary labels,
//! and a CRC-32 of everything before it.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::alloc::{AllocSpec, AuxLabels, BandAllocation, Family, LABEL_WIDTH};
use crate::caf::{interleaved_clean, Example1Case, EXAMPLE1_N, EXAMPLE1_RATE_HZ};
use crate::channel::{add_awgn, NoiseSpec};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, derived_rng};
use crate::signal::{observe, ComplexSample, Frame, SamplingClock, SymbolGrid, TxParams};

pub const MAGIC: [u8; 8] = *b"NCLPEDAT";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 8 + 4 + 4 + 8 + 1 + 8;
/// Per-record bytes besides the frame values.
pub const RECORD_TAIL_BYTES: usize = 8 + 2 + 8 * 4 + 1 + 5 + 1 + 8 + 4;

/// Which half of a sweep a record belongs to. The tags keep the two seed
/// streams apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One labeled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub frame: Frame,
    /// Bit `i` set when subcarrier `i` is active; zero for bands wider than 64.
    pub alloc: u64,
    pub n_total: u16,
    pub delta_f: f64,
    pub t0: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub family: Family,
    pub aux: AuxLabels,
    /// 1-based Example 1 case, 0 elsewhere.
    pub case_index: u8,
    /// Useful symbol duration in seconds.
    pub t_u: f64,
}

pub fn pack_bits(bits: &[u8]) -> Result<u64> {
    if bits.len() > 64 {
        return invalid(format!("{} bits do not fit a 64-bit label", bits.len()));
    }
    Ok(bits
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &b)| acc | (u64::from(b & 1) << i)))
}

pub fn unpack_bits(word: u64, width: usize) -> Vec<u8> {
    (0..width).map(|i| ((word >> i) & 1) as u8).collect()
}

impl Record {
    /// Zero-padded 64-wide pattern label.
    pub fn label_bits(&self) -> Vec<u8> {
        unpack_bits(self.alloc, LABEL_WIDTH)
    }

    /// True allocation over `n_total` subcarriers (bands of at most 64).
    pub fn allocation(&self) -> Result<BandAllocation> {
        let n = usize::from(self.n_total);
        if n > LABEL_WIDTH {
            return invalid("allocation of a wide band is not stored in the record");
        }
        BandAllocation::from_bits(&unpack_bits(self.alloc, n))
    }

    pub fn tx_params(&self) -> Result<TxParams> {
        TxParams::new(self.delta_f, self.allocation()?, self.t0, usize::from(self.n_total))
    }

    pub fn example1_case(&self) -> Option<Example1Case> {
        Example1Case::from_index(self.case_index)
    }

    fn check(&self, width: usize) -> std::result::Result<(), String> {
        if self.frame.width() != width {
            return Err(format!("frame width {} differs from header {width}", self.frame.width()));
        }
        if self.frame.values().iter().any(|v| !v.is_finite()) {
            return Err("non-finite frame value".into());
        }
        let n = usize::from(self.n_total);
        if n == 0 {
            return Err("zero subcarriers".into());
        }
        if n <= 64 {
            if self.alloc == 0 {
                return Err("empty allocation".into());
            }
            if n < 64 && self.alloc >> n != 0 {
                return Err("allocation bits beyond the band".into());
            }
        } else if self.alloc != 0 {
            return Err("wide band with a packed allocation".into());
        }
        if !(self.delta_f.is_finite() && self.delta_f > 0.0) {
            return Err("subcarrier width not positive".into());
        }
        if !(self.t0.is_finite() && self.t0 >= 0.0) {
            return Err("negative or non-finite t0".into());
        }
        if self.snr_db.is_nan() || !(self.t_u.is_finite() && self.t_u > 0.0) {
            return Err("invalid snr or symbol duration".into());
        }
        if self.case_index > 3 {
            return Err(format!("case index {} out of range", self.case_index));
        }
        Ok(())
    }

    fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        for v in self.frame.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.alloc.to_le_bytes());
        out.extend_from_slice(&self.n_total.to_le_bytes());
        for v in [self.delta_f, self.t0, self.snr_db] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.family.code());
        out.extend_from_slice(&[self.aux.q, self.aux.c, self.aux.q1, self.aux.q2, self.aux.q3]);
        out.push(self.case_index);
        out.extend_from_slice(&self.t_u.to_le_bytes());
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    fn decode(buf: &[u8], width: usize) -> std::result::Result<Self, String> {
        let body = &buf[..buf.len() - 4];
        let crc = u32::from_le_bytes(buf[buf.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != crc {
            return Err("checksum mismatch".into());
        }
        let f64_at = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().expect("8 bytes"));
        let values: Vec<f64> = (0..width).map(|i| f64_at(8 * i)).collect();
        let mut o = 8 * width;
        let alloc = u64::from_le_bytes(body[o..o + 8].try_into().expect("8 bytes"));
        o += 8;
        let n_total = u16::from_le_bytes(body[o..o + 2].try_into().expect("2 bytes"));
        o += 2;
        let (delta_f, t0, snr_db) = (f64_at(o), f64_at(o + 8), f64_at(o + 16));
        o += 24;
        let seed = u64::from_le_bytes(body[o..o + 8].try_into().expect("8 bytes"));
        o += 8;
        let family = Family::from_code(body[o]).ok_or_else(|| format!("unknown family code {}", body[o]))?;
        o += 1;
        let aux = AuxLabels {
            q: body[o],
            c: body[o + 1],
            q1: body[o + 2],
            q2: body[o + 3],
            q3: body[o + 4],
        };
        o += 5;
        let case_index = body[o];
        let t_u = f64_at(o + 1);
        let frame = Frame::from_values(values).map_err(|e| e.to_string())?;
        Ok(Self {
            frame,
            alloc,
            n_total,
            delta_f,
            t0,
            snr_db,
            seed,
            family,
            aux,
            case_index,
            t_u,
        })
    }
}

pub fn record_bytes(width: usize) -> usize {
    8 * width + RECORD_TAIL_BYTES
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub width: usize,
    pub count: u64,
    pub clock: SamplingClock,
}

fn clock_fields(clock: SamplingClock) -> (u8, f64) {
    match clock {
        SamplingClock::Fixed { rate_hz } => (0, rate_hz),
        SamplingClock::SymbolLocked { span } => (1, span),
    }
}

fn encode_header(h: &DatasetHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.width as u32).to_le_bytes());
    out.extend_from_slice(&h.count.to_le_bytes());
    let (kind, value) = clock_fields(h.clock);
    out.push(kind);
    out.extend_from_slice(&value.to_le_bytes());
    out
}

/// Streaming writer; the record count is patched into the header on
/// [`DatasetWriter::finish`].
pub struct DatasetWriter<W: Write + Seek> {
    inner: W,
    header: DatasetHeader,
    buf: Vec<u8>,
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut inner: W, width: usize, clock: SamplingClock) -> Result<Self> {
        if width == 0 || width % 2 != 0 {
            return invalid(format!("frame width must be even and positive, got {width}"));
        }
        let header = DatasetHeader { width, count: 0, clock };
        inner.write_all(&encode_header(&header))?;
        Ok(Self {
            inner,
            header,
            buf: Vec::with_capacity(record_bytes(width)),
        })
    }

    pub fn push(&mut self, record: &Record) -> Result<()> {
        if let Err(msg) = record.check(self.header.width) {
            return invalid(format!("record {}: {msg}", self.header.count));
        }
        self.buf.clear();
        record.encode(&mut self.buf);
        self.inner.write_all(&self.buf)?;
        self.header.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(16))?;
        self.inner.write_all(&self.header.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Write `records` to `path` through a temporary sibling, renamed on success.
pub fn write_dataset<'a>(
    path: &Path,
    width: usize,
    clock: SamplingClock,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<u64> {
    let tmp = temp_sibling(path)?;
    let result = (|| {
        let mut w = DatasetWriter::new(BufWriter::new(File::create(&tmp)?), width, clock)?;
        for r in records {
            w.push(r)?;
        }
        let count = w.header.count;
        let file = w.finish()?.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        Ok(count)
    })();
    match result {
        Ok(count) => {
            fs::rename(&tmp, path)?;
            Ok(count)
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn temp_sibling(path: &Path) -> Result<PathBuf> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let mut tmp = std::ffi::OsString::from(".");
    tmp.push(name);
    tmp.push(".partial");
    Ok(path.with_file_name(tmp))
}

/// Streaming reader yielding validated records one at a time.
pub struct DatasetReader<R: Read> {
    inner: R,
    header: DatasetHeader,
    next: u64,
    buf: Vec<u8>,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut head = [0u8; HEADER_BYTES as usize];
        read_fully(&mut inner, &mut head).map_err(|e| match e {
            ReadFail::Eof(got) => Error::Format {
                offset: got as u64,
                message: "file ends inside the header".into(),
            },
            ReadFail::Io(e) => Error::Io(e),
        })?;
        if head[..8] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "not a dataset file (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                what: "dataset",
                found: version,
                expected: VERSION,
            });
        }
        let width = u32::from_le_bytes(head[12..16].try_into().expect("4 bytes")) as usize;
        if width == 0 || width % 2 != 0 || width > 1 << 20 {
            return Err(Error::Format {
                offset: 12,
                message: format!("invalid frame width {width}"),
            });
        }
        let count = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes"));
        let value = f64::from_le_bytes(head[25..33].try_into().expect("8 bytes"));
        let clock = match head[24] {
            0 if value > 0.0 => SamplingClock::Fixed { rate_hz: value },
            1 if value > 0.0 => SamplingClock::SymbolLocked { span: value },
            k => {
                return Err(Error::Format {
                    offset: 24,
                    message: format!("invalid sampling clock (kind {k}, value {value})"),
                })
            }
        };
        Ok(Self {
            inner,
            header: DatasetHeader { width, count, clock },
            next: 0,
            buf: vec![0; record_bytes(width)],
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn offset_of(&self, index: u64) -> u64 {
        HEADER_BYTES + index * record_bytes(self.header.width) as u64
    }

    fn read_record(&mut self) -> Result<Record> {
        let index = self.next;
        let offset = self.offset_of(index);
        read_fully(&mut self.inner, &mut self.buf).map_err(|e| match e {
            ReadFail::Eof(_) => Error::Truncated { index, offset },
            ReadFail::Io(e) => Error::Io(e),
        })?;
        self.next += 1;
        Record::decode(&self.buf, self.header.width)
            .and_then(|r| r.check(self.header.width).map(|()| r))
            .map_err(|message| Error::Format {
                offset,
                message: format!("record {index}: {message}"),
            })
    }
}

enum ReadFail {
    Eof(usize),
    Io(io::Error),
}

fn read_fully(r: &mut impl Read, buf: &mut [u8]) -> std::result::Result<(), ReadFail> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => return Err(ReadFail::Eof(got)),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(ReadFail::Io(e)),
        }
    }
    Ok(())
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.count {
            return None;
        }
        let r = self.read_record();
        if r.is_err() {
            // Stop after the first failure.
            self.next = self.header.count;
        }
        Some(r)
    }
}

/// Load a whole file into memory.
pub fn load(path: &Path) -> Result<(DatasetHeader, Vec<Record>)> {
    let reader = DatasetReader::open(path)?;
    let header = *reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

/// Anything that can produce the `index`-th record of a split on demand.
pub trait RecordSource: Sync {
    fn width(&self) -> usize;
    fn clock(&self) -> SamplingClock;
    fn count(&self, split: Split) -> usize;
    fn record(&self, split: Split, index: u64) -> Result<Record>;
    /// Noiseless frame samples reproduced from a record's labels and seed.
    fn reconstruct(&self, record: &Record) -> Result<Vec<ComplexSample>>;
}

fn default_t0_us() -> Vec<f64> {
    vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
}
fn default_n_total() -> Vec<usize> {
    vec![16, 32, 64]
}
fn default_delta_f_khz() -> Vec<f64> {
    vec![15.0, 20.0, 25.0, 30.0]
}
fn default_families() -> Vec<AllocSpec> {
    vec![AllocSpec::struct1()]
}
fn default_snr_db() -> Vec<f64> {
    vec![10.0]
}
fn default_train() -> usize {
    60_000
}
fn default_test() -> usize {
    15_000
}
fn default_width() -> usize {
    192
}

/// Parameter grid for exploiter datasets. Every record draws each field
/// uniformly from its set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_t0_us")]
    pub t0_us: Vec<f64>,
    #[serde(default = "default_n_total")]
    pub n_total: Vec<usize>,
    #[serde(default = "default_delta_f_khz")]
    pub delta_f_khz: Vec<f64>,
    #[serde(default = "default_families")]
    pub families: Vec<AllocSpec>,
    #[serde(default = "default_snr_db")]
    pub snr_db: Vec<f64>,
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default = "default_test")]
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub clock: SamplingClock,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            t0_us: default_t0_us(),
            n_total: default_n_total(),
            delta_f_khz: default_delta_f_khz(),
            families: default_families(),
            snr_db: default_snr_db(),
            train: default_train(),
            test: default_test(),
            seed: 0,
            width: default_width(),
            clock: SamplingClock::default(),
        }
    }
}

impl SweepSpec {
    pub fn for_family(spec: AllocSpec, snr_db: f64) -> Self {
        Self {
            families: vec![spec],
            snr_db: vec![snr_db],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t0_us.is_empty()
            || self.n_total.is_empty()
            || self.delta_f_khz.is_empty()
            || self.families.is_empty()
            || self.snr_db.is_empty()
        {
            return bad("every sweep set needs at least one value".into());
        }
        if self.t0_us.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("t0 values must be finite and non-negative".into());
        }
        if self.n_total.iter().any(|&n| n == 0 || n > LABEL_WIDTH) {
            return bad(format!("subcarrier counts must lie in 1..={LABEL_WIDTH}"));
        }
        if self.delta_f_khz.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad("subcarrier widths must be positive".into());
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return bad("SNR values must be numbers".into());
        }
        if self.width == 0 || self.width % 2 != 0 {
            return bad(format!("frame width must be even and positive, got {}", self.width));
        }
        match self.clock {
            SamplingClock::Fixed { rate_hz } if !(rate_hz.is_finite() && rate_hz > 0.0) => {
                return bad("clock rate must be positive".into())
            }
            SamplingClock::SymbolLocked { span } if !(span.is_finite() && span > 0.0) => {
                return bad("clock span must be positive".into())
            }
            _ => {}
        }
        for f in &self.families {
            f.validate()?;
        }
        if let SamplingClock::Fixed { rate_hz } = self.clock {
            let n_max = *self.n_total.iter().max().expect("non-empty");
            let df_max = self.delta_f_khz.iter().copied().fold(0.0, f64::max) * 1e3;
            if (n_max - 1) as f64 * df_max >= rate_hz {
                return bad(format!(
                    "clock rate {rate_hz} Hz aliases tones up to {} Hz",
                    (n_max - 1) as f64 * df_max
                ));
            }
        }
        Ok(())
    }
}

fn pick<T: Copy>(xs: &[T], rng: &mut crate::rng::Rng) -> T {
    *xs.choose(rng).expect("validated non-empty")
}

fn payload_grid(alloc: &BandAllocation, seed: u64) -> SymbolGrid {
    SymbolGrid::random(alloc, 1, &mut derived_rng(seed, "payload", 0))
}

fn noise_spec(snr_db: f64, seed: u64) -> NoiseSpec {
    NoiseSpec::new(snr_db, derive_seed(seed, "noise", 0))
}

impl RecordSource for SweepSpec {
    fn width(&self) -> usize {
        self.width
    }

    fn clock(&self) -> SamplingClock {
        self.clock
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
        }
    }

    fn record(&self, split: Split, index: u64) -> Result<Record> {
        let seed = derive_seed(self.seed, split.tag(), index);
        let mut rng = derived_rng(seed, "params", 0);
        let t0 = pick(&self.t0_us, &mut rng) * 1e-6;
        let n = pick(&self.n_total, &mut rng);
        let delta_f = pick(&self.delta_f_khz, &mut rng) * 1e3;
        let family = self.families.choose(&mut rng).expect("validated non-empty");
        let snr_db = pick(&self.snr_db, &mut rng);
        let (alloc, aux) = family.draw(n, &mut rng)?;
        let packed = pack_bits(&alloc.to_bits())?;
        let grid = payload_grid(&alloc, seed);
        let params = TxParams::new(delta_f, alloc, t0, n)?;
        let clean = observe(&params, &grid, self.clock, self.width)?;
        let noisy = add_awgn(&clean, &noise_spec(snr_db, seed));
        Ok(Record {
            frame: Frame::from_samples(&noisy),
            alloc: packed,
            n_total: n as u16,
            delta_f,
            t0,
            snr_db,
            seed,
            family: family.family(),
            aux,
            case_index: 0,
            t_u: 1.0 / delta_f,
        })
    }

    fn reconstruct(&self, record: &Record) -> Result<Vec<ComplexSample>> {
        let params = record.tx_params()?;
        let grid = payload_grid(params.alloc(), record.seed);
        observe(&params, &grid, self.clock, self.width)
    }
}

fn default_e1_train() -> usize {
    50_000
}
fn default_e1_test() -> usize {
    15_000
}
fn default_e1_snr() -> f64 {
    5.0
}
fn default_e1_width() -> usize {
    768
}

/// Dataset of the three interleaved parameter sets, cases drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example1Sweep {
    #[serde(default = "default_e1_train")]
    pub train: usize,
    #[serde(default = "default_e1_test")]
    pub test: usize,
    #[serde(default = "default_e1_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_e1_width")]
    pub width: usize,
}

impl Default for Example1Sweep {
    fn default() -> Self {
        Self {
            train: default_e1_train(),
            test: default_e1_test(),
            snr_db: default_e1_snr(),
            seed: 0,
            width: default_e1_width(),
        }
    }
}

impl Example1Sweep {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!("frame width must be even and positive, got {}", self.width)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("SNR must be a number".into()));
        }
        Ok(())
    }
}

impl RecordSource for Example1Sweep {
    fn width(&self) -> usize {
        self.width
    }

    fn clock(&self) -> SamplingClock {
        SamplingClock::Fixed {
            rate_hz: EXAMPLE1_RATE_HZ,
        }
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
        }
    }

    fn record(&self, split: Split, index: u64) -> Result<Record> {
        let seed = derive_seed(self.seed, split.tag(), index);
        let mut rng = derived_rng(seed, "params", 0);
        let case = *Example1Case::ALL.choose(&mut rng).expect("three cases");
        let params = case.params();
        let clean = interleaved_clean(&params, self.width / 2, &mut derived_rng(seed, "payload", 0))?;
        let noisy = add_awgn(&clean, &noise_spec(self.snr_db, seed));
        Ok(Record {
            frame: Frame::from_samples(&noisy),
            alloc: 0,
            n_total: EXAMPLE1_N as u16,
            delta_f: params.delta_f(),
            t0: 0.0,
            snr_db: self.snr_db,
            seed,
            family: Family::Interleaved,
            aux: AuxLabels {
                q: case.q() as u8,
                ..AuxLabels::default()
            },
            case_index: case.index(),
            t_u: case.t_u(),
        })
    }

    fn reconstruct(&self, record: &Record) -> Result<Vec<ComplexSample>> {
        let case = record
            .example1_case()
            .ok_or_else(|| Error::InvalidInput("record carries no Example 1 case".into()))?;
        interleaved_clean(&case.params(), self.width / 2, &mut derived_rng(record.seed, "payload", 0))
    }
}

/// Generate one split in index order, spreading contiguous index ranges
/// over `threads` workers. The result does not depend on `threads`.
pub fn generate_records<S: RecordSource>(source: &S, split: Split, threads: usize) -> Result<Vec<Record>> {
    let n = source.count(split);
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n as u64).map(|i| source.record(split, i)).collect();
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Result<Vec<Record>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let lo = (t * chunk).min(n) as u64;
                let hi = ((t + 1) * chunk).min(n) as u64;
                scope.spawn(move || (lo..hi).map(|i| source.record(split, i)).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generator thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub train_count: u64,
    pub test_count: u64,
}

/// Write `{stem}-train.ncds` and `{stem}-test.ncds` under `dir`.
pub fn generate<S: RecordSource>(source: &S, dir: &Path, stem: &str, threads: usize) -> Result<GeneratedFiles> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut counts = Vec::new();
    for split in [Split::Train, Split::Test] {
        let records = generate_records(source, split, threads)?;
        let path = dir.join(format!("{stem}-{}.ncds", split.tag()));
        counts.push(write_dataset(&path, source.width(), source.clock(), &records)?);
        paths.push(path);
    }
    Ok(GeneratedFiles {
        train: paths[0].clone(),
        test: paths[1].clone(),
        train_count: counts[0],
        test_count: counts[1],
    })
}

/// Measured SNR (dB) of `frame` against its reconstructed clean samples,
/// over the pooled residual of all given records.
pub fn residual_snr_db<S: RecordSource>(source: &S, records: &[&Record]) -> Result<f64> {
    let (mut signal, mut noise) = (0.0, 0.0);
    for r in records {
        let clean = source.reconstruct(r)?;
        for (c, x) in clean.iter().zip(r.frame.samples()) {
            signal += c.norm_sqr();
            noise += (x - c).norm_sqr();
        }
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn small(n: usize) -> SweepSpec {
        SweepSpec {
            train: n,
            test: n / 2,
            seed: 3,
            families: vec![AllocSpec::Ofdm, AllocSpec::struct1(), AllocSpec::struct2(), AllocSpec::random()],
            ..SweepSpec::default()
        }
    }

    fn encode_all(spec: &SweepSpec, records: &[Record]) -> Vec<u8> {
        let mut w = DatasetWriter::new(Cursor::new(Vec::new()), spec.width, spec.clock).unwrap();
        for r in records {
            w.push(r).unwrap();
        }
        w.finish().unwrap().into_inner()
    }

    #[test]
    fn defaults_follow_the_sweep() {
        let s = SweepSpec::default();
        assert_eq!(s.t0_us, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(s.n_total, vec![16, 32, 64]);
        assert_eq!(s.delta_f_khz, vec![15.0, 20.0, 25.0, 30.0]);
        assert_eq!((s.train, s.test), (60_000, 15_000));
        s.validate().unwrap();
    }

    #[test]
    fn pack_roundtrip() {
        let bits: Vec<u8> = (0..64).map(|i| u8::from(i % 3 == 0)).collect();
        assert_eq!(unpack_bits(pack_bits(&bits).unwrap(), 64), bits);
        assert!(pack_bits(&[0; 65]).is_err());
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let spec = small(40);
        let records = generate_records(&spec, Split::Train, 1).unwrap();
        let bytes = encode_all(&spec, &records);
        assert_eq!(bytes.len() as u64, HEADER_BYTES + 40 * record_bytes(192) as u64);
        let back: Vec<Record> = DatasetReader::new(&bytes[..]).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(back, records);
        assert_eq!(encode_all(&spec, &back), bytes);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let spec = small(23);
        let a = generate_records(&spec, Split::Test, 1).unwrap();
        let b = generate_records(&spec, Split::Test, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn splits_use_distinct_seeds() {
        let spec = small(200);
        let train = generate_records(&spec, Split::Train, 1).unwrap();
        let test = generate_records(&spec, Split::Test, 1).unwrap();
        let seeds: std::collections::HashSet<u64> = train.iter().map(|r| r.seed).collect();
        assert!(test.iter().all(|r| !seeds.contains(&r.seed)));
    }

    #[test]
    fn truncation_names_the_record() {
        let spec = small(5);
        let records = generate_records(&spec, Split::Train, 1).unwrap();
        let bytes = encode_all(&spec, &records);
        let cut = &bytes[..bytes.len() - 10];
        let res: Vec<Result<Record>> = DatasetReader::new(cut).unwrap().collect();
        assert_eq!(res.len(), 5);
        assert!(res[..4].iter().all(|r| r.is_ok()));
        match &res[4] {
            Err(Error::Truncated { index, offset }) => {
                assert_eq!(*index, 4);
                assert_eq!(*offset, HEADER_BYTES + 4 * record_bytes(192) as u64);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corruption_and_version_detected() {
        let spec = small(3);
        let records = generate_records(&spec, Split::Train, 1).unwrap();
        let mut bytes = encode_all(&spec, &records);
        let mut v = bytes.clone();
        v[8] = 2;
        assert!(matches!(
            DatasetReader::new(&v[..]),
            Err(Error::Version { found: 2, expected: 1, .. })
        ));
        let at = HEADER_BYTES as usize + record_bytes(192) + 17;
        bytes[at] ^= 0x40;
        let res: Vec<_> = DatasetReader::new(&bytes[..]).unwrap().collect();
        assert!(res[0].is_ok());
        assert!(matches!(&res[1], Err(Error::Format { message, .. }) if message.contains("record 1")));
        assert_eq!(res.len(), 2);
        assert!(matches!(DatasetReader::new(&bytes[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn labels_are_zero_padded() {
        let spec = SweepSpec {
            n_total: vec![16],
            ..small(20)
        };
        for r in generate_records(&spec, Split::Train, 1).unwrap() {
            let bits = r.label_bits();
            assert!(bits[16..].iter().all(|&b| b == 0));
            assert_eq!(r.allocation().unwrap().len(), 16);
        }
    }

    #[test]
    fn residual_is_noise_at_the_stored_snr() {
        let spec = SweepSpec {
            snr_db: vec![5.0],
            ..small(200)
        };
        let records = generate_records(&spec, Split::Train, 1).unwrap();
        let refs: Vec<&Record> = records.iter().collect();
        let snr = residual_snr_db(&spec, &refs).unwrap();
        assert!((snr - 5.0).abs() < 0.2, "{snr}");
        let e1 = Example1Sweep {
            train: 30,
            ..Example1Sweep::default()
        };
        let recs = generate_records(&e1, Split::Train, 1).unwrap();
        let refs: Vec<&Record> = recs.iter().collect();
        let snr = residual_snr_db(&e1, &refs).unwrap();
        assert!((snr - 5.0).abs() < 0.2, "{snr}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = SweepSpec::default();
        s.n_total = vec![65];
        assert!(s.validate().is_err());
        let mut s = SweepSpec::default();
        s.width = 191;
        assert!(s.validate().is_err());
        let mut s = SweepSpec::default();
        s.clock = SamplingClock::Fixed { rate_hz: 1.0e6 };
        assert!(s.validate().is_err());
        assert!(toml::from_str::<SweepSpec>("bogus = 1").is_err());
    }

    #[test]
    fn struct1_q_marginal_is_uniform() {
        let spec = SweepSpec {
            train: 100_000,
            ..SweepSpec::for_family(AllocSpec::struct1(), 10.0)
        };
        let mut counts = [0f64; 6];
        for i in 0..spec.train as u64 {
            // Labels only: same stream as the full record.
            let seed = derive_seed(spec.seed, Split::Train.tag(), i);
            let mut rng = derived_rng(seed, "params", 0);
            let _ = pick(&spec.t0_us, &mut rng);
            let n = pick(&spec.n_total, &mut rng);
            let _ = pick(&spec.delta_f_khz, &mut rng);
            let fam = spec.families.choose(&mut rng).unwrap();
            let _ = pick(&spec.snr_db, &mut rng);
            let (_, aux) = fam.draw(n, &mut rng).unwrap();
            counts[usize::from(aux.q) - 1] += 1.0;
        }
        let e = spec.train as f64 / 6.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 99.9th percentile of chi-square with 5 degrees of freedom.
        assert!(chi2 < 20.52, "{counts:?} chi2 {chi2}");
        for c in counts {
            let sigma = (spec.train as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
            assert!((c - e).abs() < 3.0 * sigma);
        }
        // The label-only replay matches full generation.
        let r = spec.record(Split::Train, 17).unwrap();
        let seed = derive_seed(spec.seed, "train", 17);
        assert_eq!(r.seed, seed);
    }
}
