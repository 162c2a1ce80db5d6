//! Versioned little-endian binary containers for channels, datasets and
//! model checkpoints, plus JSON for cluster sets.
//!
//! Every file starts with an 8-byte magic and a `u32` version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use mmwdet_core::channel::{ChannelRealization, ClusterSet};
use mmwdet_core::modem::{Dataset, DatasetRole, LinkConfig, Modulation, RxBlock, Sample, SnrMode};
use mmwdet_core::nn::{Activation, Parameters};
use mmwdet_core::sbrnn::{SbrnnConfig, SbrnnModel};
use mmwdet_core::Complex64;

use crate::error::{io_err, HarnessError, Result};

pub const FORMAT_VERSION: u32 = 1;
const CHANNEL_MAGIC: &[u8; 8] = b"MMWCHAN\0";
const DATASET_MAGIC: &[u8; 8] = b"MMWDATA\0";
const CHECKPOINT_MAGIC: &[u8; 8] = b"MMWCKPT\0";

/// Upper bound on any length field, to fail fast on corrupt files.
const MAX_LEN: u64 = 1 << 34;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }

    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }

    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn usize(&mut self, v: usize) -> std::io::Result<()> {
        self.u64(v as u64)
    }

    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn complex(&mut self, values: &[Complex64]) -> std::io::Result<()> {
        for v in values {
            self.f64(v.re)?;
            self.f64(v.im)?;
        }
        Ok(())
    }

    fn header(&mut self, magic: &[u8; 8]) -> std::io::Result<()> {
        self.bytes(magic)?;
        self.u32(FORMAT_VERSION)
    }
}

struct Reader<'p, R: Read> {
    inner: R,
    path: &'p Path,
}

impl<R: Read> Reader<'_, R> {
    fn fail(&self, message: impl Into<String>) -> HarnessError {
        HarnessError::Format { path: self.path.to_path_buf(), message: message.into() }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| self.fail(format!("truncated file: {e}")))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_LEN {
            return Err(self.fail(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        (0..n).map(|_| Ok(Complex64::new(self.f64()?, self.f64()?))).collect()
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        let m: [u8; 8] = self.array()?;
        if &m != magic {
            return Err(self.fail(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(self.fail(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.fail("trailing bytes after payload")),
            Err(e) => Err(self.fail(e.to_string())),
        }
    }
}

fn create(path: &Path) -> Result<Writer<BufWriter<File>>> {
    Ok(Writer { inner: BufWriter::new(File::create(path).map_err(io_err(path))?) })
}

fn open(path: &Path) -> Result<Reader<'_, BufReader<File>>> {
    Ok(Reader { inner: BufReader::new(File::open(path).map_err(io_err(path))?), path })
}

fn modulation_code(m: Modulation) -> u8 {
    m.alphabet_size() as u8
}

fn modulation_from(code: u64) -> Option<Modulation> {
    match code {
        2 => Some(Modulation::Bpsk),
        4 => Some(Modulation::Qpsk),
        _ => None,
    }
}

/// Header `(Nr, T, Ts, normalization, seed, truncated)` then the taps
/// row-major (`T x Nr`) as `(re, im)` pairs.
pub fn save_channel(path: &Path, channel: &ChannelRealization) -> Result<()> {
    let mut w = create(path)?;
    let run = |w: &mut Writer<BufWriter<File>>| -> std::io::Result<()> {
        w.header(CHANNEL_MAGIC)?;
        w.usize(channel.num_antennas())?;
        w.usize(channel.memory())?;
        w.f64(channel.symbol_period())?;
        w.f64(channel.normalization())?;
        w.u64(channel.seed())?;
        w.u8(channel.truncated() as u8)?;
        w.complex(channel.taps())?;
        w.inner.flush()
    };
    run(&mut w).map_err(io_err(path))
}

pub fn load_channel(path: &Path) -> Result<ChannelRealization> {
    let mut r = open(path)?;
    r.header(CHANNEL_MAGIC)?;
    let nr = r.len()?;
    let memory = r.len()?;
    let ts = r.f64()?;
    let normalization = r.f64()?;
    let seed = r.u64()?;
    let truncated = r.u8()? != 0;
    let taps = r.complex(nr * memory)?;
    r.finish()?;
    Ok(ChannelRealization::from_taps(taps, memory, nr, ts)?.with_provenance(normalization, seed, truncated))
}

pub fn save_clusters(path: &Path, clusters: &ClusterSet) -> Result<()> {
    let text = serde_json::to_string_pretty(clusters)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn load_clusters(path: &Path) -> Result<ClusterSet> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let clusters: ClusterSet = serde_json::from_str(&text)?;
    clusters.validate()?;
    Ok(clusters)
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let run = |w: &mut Writer<BufWriter<File>>| -> std::io::Result<()> {
        w.header(DATASET_MAGIC)?;
        w.u64(dataset.id)?;
        w.u8(match dataset.role {
            DatasetRole::Train => 0,
            DatasetRole::Eval => 1,
        })?;
        w.u8(modulation_code(dataset.modulation))?;
        let link = &dataset.link;
        match link.snr {
            SnrMode::Fixed(db) => {
                w.u8(0)?;
                w.f64(db)?;
                w.f64(db)?;
            }
            SnrMode::Uniform { lo, hi } => {
                w.u8(1)?;
                w.f64(lo)?;
                w.f64(hi)?;
            }
        }
        w.usize(link.num_users)?;
        w.usize(link.block_length)?;
        w.u64(link.seed)?;
        w.usize(dataset.samples.len())?;
        for s in &dataset.samples {
            w.f64(s.snr_db)?;
            w.usize(s.symbols.indices.len())?;
            w.bytes(&s.symbols.indices)?;
            w.usize(s.rx.num_antennas)?;
            w.usize(s.rx.block_len)?;
            w.usize(s.rx.num_columns())?;
            w.f64(s.rx.noise_variance)?;
            w.u64(s.rx.channel_id)?;
            w.complex(&s.rx.samples)?;
        }
        w.inner.flush()
    };
    run(&mut w).map_err(io_err(path))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = open(path)?;
    r.header(DATASET_MAGIC)?;
    let id = r.u64()?;
    let role = match r.u8()? {
        0 => DatasetRole::Train,
        1 => DatasetRole::Eval,
        v => return Err(r.fail(format!("unknown dataset role {v}"))),
    };
    let modulation = modulation_from(r.u8()? as u64).ok_or_else(|| r.fail("unknown modulation"))?;
    let tag = r.u8()?;
    let (a, b) = (r.f64()?, r.f64()?);
    let snr = match tag {
        0 => SnrMode::Fixed(a),
        1 => SnrMode::Uniform { lo: a, hi: b },
        v => return Err(r.fail(format!("unknown SNR mode {v}"))),
    };
    let link = LinkConfig { snr, num_users: r.len()?, block_length: r.len()?, seed: r.u64()? };
    let n = r.len()?;
    let mut samples = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let snr_db = r.f64()?;
        let len = r.len()?;
        let mut indices = vec![0u8; len];
        r.inner.read_exact(&mut indices).map_err(|e| r.fail(format!("truncated file: {e}")))?;
        let symbols = mmwdet_core::modem::modulate(&indices, modulation)?;
        let num_antennas = r.len()?;
        let block_len = r.len()?;
        let columns = r.len()?;
        let noise_variance = r.f64()?;
        let channel_id = r.u64()?;
        if num_antennas == 0 || block_len != len || columns < block_len {
            return Err(r.fail("inconsistent block dimensions"));
        }
        let rx_samples = r.complex(columns * num_antennas)?;
        let rx = RxBlock { samples: rx_samples, num_antennas, block_len, noise_variance, channel_id };
        samples.push(Sample { symbols, rx, snr_db });
    }
    r.finish()?;
    Ok(Dataset { id, role, link, modulation, samples })
}

/// Header `(Nr, H, W, layers, M, activation, layer norm)` then the flat
/// parameter vector in [`Parameters`] order.
pub fn save_checkpoint(path: &Path, model: &SbrnnModel) -> Result<()> {
    let mut w = create(path)?;
    let cfg = model.config();
    let params = model.to_flat();
    let run = |w: &mut Writer<BufWriter<File>>| -> std::io::Result<()> {
        w.header(CHECKPOINT_MAGIC)?;
        w.usize(cfg.num_antennas)?;
        w.usize(cfg.hidden_size)?;
        w.usize(cfg.window)?;
        w.usize(cfg.num_layers)?;
        w.u8(modulation_code(cfg.modulation))?;
        w.u8(match model.head().activation() {
            Activation::Sigmoid => 0,
            Activation::Softmax => 1,
        })?;
        w.u8(cfg.layer_norm as u8)?;
        w.usize(params.len())?;
        for p in &params {
            w.f64(*p)?;
        }
        w.inner.flush()
    };
    run(&mut w).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<SbrnnModel> {
    let mut r = open(path)?;
    r.header(CHECKPOINT_MAGIC)?;
    let num_antennas = r.len()?;
    let hidden_size = r.len()?;
    let window = r.len()?;
    let num_layers = r.len()?;
    let modulation = modulation_from(r.u8()? as u64).ok_or_else(|| r.fail("unknown modulation"))?;
    let activation = r.u8()?;
    let layer_norm = r.u8()? != 0;
    let config = SbrnnConfig { num_antennas, hidden_size, window, num_layers, modulation, layer_norm };
    let mut model = SbrnnModel::zeros(config)?;
    let expected = match model.head().activation() {
        Activation::Sigmoid => 0,
        Activation::Softmax => 1,
    };
    if activation != expected {
        return Err(r.fail("activation does not match the modulation"));
    }
    let n = r.len()?;
    if n != model.num_params() {
        return Err(r.fail(format!("{n} parameters stored, architecture needs {}", model.num_params())));
    }
    let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    model.load_flat(&params)?;
    Ok(model)
}
