//! Deterministic parameter-grid runner with resumable checkpoints.
//!
//! Cells are numbered in lexicographic order of the axes (first axis
//! slowest). Each cell gets a seed derived from the global seed and its
//! index, so results do not depend on scheduling, thread count or resume
//! history.
//!
//! # Checkpoint format
//!
//! All integers little-endian.
//!
//! ```text
//! header  : magic  b"STACKPT1"   8 bytes
//!           version u32          currently 1
//!           seed    u64          global seed of the job
//!           fingerprint u64      FNV-1a 64 of task id and axis values
//! record  : cell    u64          lexicographic cell index
//!           len     u32          number of f64 values in the payload
//!           payload len × f64    IEEE-754 binary64
//!           check   u64          FNV-1a 64 over cell, len and payload bytes
//! ```
//!
//! Records are appended after each batch of completed cells. A record cut
//! short by a crash at the end of the file is dropped (with a warning) and
//! recomputed; a complete record with a bad checksum, or a header that does
//! not match the job, is an error.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 8 + 4 + 8 + 8;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of cell `index` under global seed `seed`.
pub fn cell_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Axis { name: name.into(), values }
    }

    /// `n` points from `lo` to `hi` inclusive.
    pub fn linear(name: impl Into<String>, lo: f64, hi: f64, n: usize) -> Self {
        let values = if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        Axis::new(name, values)
    }
}

#[derive(Debug, Clone)]
pub struct SweepJob {
    pub axes: Vec<Axis>,
    /// Identifies the computation; part of the checkpoint fingerprint.
    pub task_id: String,
    pub threads: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    /// Cells evaluated between checkpoint appends.
    pub batch: usize,
    /// Stop (as if killed) after this many newly evaluated cells.
    pub stop_after: Option<usize>,
}

impl SweepJob {
    pub fn new(task_id: impl Into<String>, axes: Vec<Axis>) -> Self {
        SweepJob {
            axes,
            task_id: task_id.into(),
            threads: 1,
            seed: 0,
            checkpoint: None,
            batch: 64,
            stop_after: None,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(self.task_id.as_bytes());
        for a in &self.axes {
            bytes.push(0);
            bytes.extend_from_slice(a.name.as_bytes());
            for v in &a.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }

    /// Cell descriptor for a flat index.
    pub fn cell(&self, index: usize) -> Cell {
        let mut rem = index;
        let mut indices = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            indices[k] = rem % a.values.len();
            rem /= a.values.len();
        }
        let coords = indices
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.values[i])
            .collect();
        Cell {
            index: index as u64,
            indices,
            coords,
            seed: cell_seed(self.seed, index as u64),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::invalid("sweep needs at least one axis"));
        }
        if let Some(a) = self.axes.iter().find(|a| a.values.is_empty()) {
            return Err(Error::invalid(format!("sweep axis '{}' is empty", a.name)));
        }
        if self.threads == 0 {
            return Err(Error::invalid("thread count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: u64,
    pub indices: Vec<usize>,
    pub coords: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis_names: Vec<String>,
    pub seed: u64,
    pub rows: Vec<(Cell, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Complete(SweepTable),
    Interrupted { completed: usize, total: usize },
}

impl SweepOutcome {
    pub fn into_table(self) -> Result<SweepTable> {
        match self {
            SweepOutcome::Complete(t) => Ok(t),
            SweepOutcome::Interrupted { completed, total } => Err(Error::Convergence(format!(
                "sweep interrupted after {completed} of {total} cells"
            ))),
        }
    }
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn encode_record(cell: u64, values: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * values.len() + 8);
    buf.extend_from_slice(&cell.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let check = fnv1a64(&buf);
    buf.extend_from_slice(&check.to_le_bytes());
    buf
}

/// Reads a checkpoint, returning completed cells and the byte length of
/// its valid prefix.
pub fn read_checkpoint(
    path: &Path,
    seed: u64,
    fingerprint: u64,
    n_cells: usize,
) -> Result<(Vec<Option<Vec<f64>>>, u64)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let remedy = "delete the file to restart the sweep from scratch";
    if bytes.len() < HEADER_LEN as usize {
        if bytes.is_empty() {
            return Ok((vec![None; n_cells], 0));
        }
        return Err(ckpt_err(path, format!("truncated header; {remedy}")));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ckpt_err(path, format!("not a sweep checkpoint (bad magic); {remedy}")));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(path, format!("unsupported version {version}; {remedy}")));
    }
    let file_seed = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let file_fp = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    if file_seed != seed || file_fp != fingerprint {
        return Err(ckpt_err(
            path,
            format!(
                "checkpoint belongs to a different job (seed {file_seed}, fingerprint {file_fp:#x}; \
                 expected seed {seed}, fingerprint {fingerprint:#x}); use the original configuration \
                 or {remedy}"
            ),
        ));
    }
    let mut done: Vec<Option<Vec<f64>>> = vec![None; n_cells];
    let mut pos = HEADER_LEN as usize;
    let mut count = 0usize;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < 12 {
            log::warn!(
                "{}: dropping incomplete trailing record at byte {pos}",
                path.display()
            );
            break;
        }
        let cell = u64::from_le_bytes(rest[..8].try_into().unwrap());
        let len = u32::from_le_bytes(rest[8..12].try_into().unwrap()) as usize;
        let rec_len = 12 + 8 * len + 8;
        if rest.len() < rec_len {
            log::warn!(
                "{}: dropping incomplete trailing record at byte {pos}",
                path.display()
            );
            break;
        }
        let check = u64::from_le_bytes(rest[rec_len - 8..rec_len].try_into().unwrap());
        if fnv1a64(&rest[..rec_len - 8]) != check {
            return Err(ckpt_err(
                path,
                format!(
                    "checksum mismatch in record {count} at byte {pos}; truncate the file to {pos} \
                     bytes to keep the {count} records before it, or {remedy}"
                ),
            ));
        }
        if cell as usize >= n_cells {
            return Err(ckpt_err(
                path,
                format!("record {count} names cell {cell} outside the grid; {remedy}"),
            ));
        }
        let values = rest[12..12 + 8 * len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        done[cell as usize] = Some(values);
        pos += rec_len;
        count += 1;
    }
    Ok((done, pos as u64))
}

fn open_checkpoint(job: &SweepJob, path: &Path) -> Result<(Vec<Option<Vec<f64>>>, File)> {
    let n = job.n_cells();
    let fp = job.fingerprint();
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    if exists {
        let (done, valid) = read_checkpoint(path, job.seed, fp, n)?;
        let mut f = OpenOptions::new().read(true).write(true).open(path)?;
        if valid == 0 {
            write_header(&mut f, job.seed, fp)?;
        } else {
            f.set_len(valid)?;
            f.seek(SeekFrom::End(0))?;
        }
        Ok((done, f))
    } else {
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        write_header(&mut f, job.seed, fp)?;
        Ok((vec![None; n], f))
    }
}

fn write_header(f: &mut File, seed: u64, fp: u64) -> Result<()> {
    f.set_len(0)?;
    f.seek(SeekFrom::Start(0))?;
    let mut h = Vec::with_capacity(HEADER_LEN as usize);
    h.extend_from_slice(CHECKPOINT_MAGIC);
    h.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    h.extend_from_slice(&seed.to_le_bytes());
    h.extend_from_slice(&fp.to_le_bytes());
    f.write_all(&h)?;
    f.sync_data()?;
    Ok(())
}

/// Evaluates every cell of `job` with `task`, resuming from the checkpoint
/// when one exists.
pub fn run<F>(job: &SweepJob, task: F) -> Result<SweepOutcome>
where
    F: Fn(&Cell) -> Result<Vec<f64>> + Sync,
{
    job.validate()?;
    let n = job.n_cells();
    let (mut done, mut file) = match &job.checkpoint {
        Some(p) => {
            let (d, f) = open_checkpoint(job, p)?;
            (d, Some(f))
        }
        None => (vec![None; n], None),
    };
    let pending: Vec<usize> = (0..n).filter(|&i| done[i].is_none()).collect();
    let resumed = n - pending.len();
    if resumed > 0 {
        log::info!("resuming sweep: {resumed} of {n} cells already complete");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job.threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;

    let budget = job.stop_after.unwrap_or(usize::MAX);
    let mut evaluated = 0usize;
    for chunk in pending.chunks(job.batch.max(1)) {
        if evaluated >= budget {
            break;
        }
        let take = chunk.len().min(budget - evaluated);
        let chunk = &chunk[..take];
        let results: Vec<Result<Vec<f64>>> =
            pool.install(|| chunk.par_iter().map(|&i| task(&job.cell(i))).collect());
        let mut out = file.as_mut().map(BufWriter::new);
        for (&i, r) in chunk.iter().zip(results) {
            let values = r?;
            if let Some(w) = out.as_mut() {
                w.write_all(&encode_record(i as u64, &values))?;
            }
            done[i] = Some(values);
        }
        if let Some(mut w) = out {
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        evaluated += take;
        log::debug!("sweep progress: {} / {n}", resumed + evaluated);
    }
    let completed = done.iter().filter(|d| d.is_some()).count();
    if completed < n {
        return Ok(SweepOutcome::Interrupted { completed, total: n });
    }
    let rows = done
        .into_iter()
        .enumerate()
        .map(|(i, v)| (job.cell(i), v.expect("all cells complete")))
        .collect();
    Ok(SweepOutcome::Complete(SweepTable {
        axis_names: job.axes.iter().map(|a| a.name.clone()).collect(),
        seed: job.seed,
        rows,
    }))
}

impl SweepTable {
    /// Generic CSV: axis columns followed by `value_names`, values printed
    /// with 17 significant digits. Non-finite values are written empty.
    pub fn write_csv<W: Write>(&self, mut w: W, value_names: &[&str]) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        let mut header: Vec<&str> = self.axis_names.iter().map(String::as_str).collect();
        header.extend_from_slice(value_names);
        writeln!(w, "{}", header.join(","))?;
        for (cell, values) in &self.rows {
            let mut fields: Vec<String> = cell.coords.iter().map(|c| format!("{c:.16e}")).collect();
            fields.extend(values.iter().map(|v| {
                if v.is_finite() {
                    format!("{v:.16e}")
                } else {
                    String::new()
                }
            }));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}
