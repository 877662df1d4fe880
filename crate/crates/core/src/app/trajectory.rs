//! Binary trajectory container and CSV export.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! header   "SLNDRTRJ" | version u32 | n_fibers u32 | n_tangent u32 | n_sites u32
//!          | config_len u64 | config text (UTF-8)
//! frame    "FRAM" | step u64 | time f64
//!          | per fiber: N tangents (3 f64 each), midpoint (3 f64)
//!          | gmres_iterations u32 | gmres_residual f64 | newton_failures u32 | contacts u32
//!          | n_singly u32 | singly sites u32… | n_doubly u32 | (site u32, site u32)…
//! footer   "INDX" | frame offsets u64… | n_frames u64 | "END!"
//! ```
//!
//! A file without footer (interrupted run) is still readable by scanning the
//! frames sequentially.

use crate::error::{Error, Result};
use crate::filament::{DiscretizationOps, FilamentShape};
use nalgebra::Vector3;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SLNDRTRJ";
pub const VERSION: u32 = 1;
const FRAME_TAG: &[u8; 4] = b"FRAM";
const INDEX_TAG: &[u8; 4] = b"INDX";
const END_TAG: &[u8; 4] = b"END!";

#[derive(Clone, Debug, PartialEq)]
pub struct FiberState {
    pub tau: Vec<Vector3<f64>>,
    pub midpoint: Vector3<f64>,
}

impl FiberState {
    pub fn from_shape(s: &FilamentShape) -> Self {
        Self { tau: s.tau().to_vec(), midpoint: *s.midpoint() }
    }

    pub fn shape(&self, ops: &DiscretizationOps) -> Result<FilamentShape> {
        FilamentShape::new(self.tau.clone(), self.midpoint, ops)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameDiagnostics {
    pub gmres_iterations: u32,
    pub gmres_residual: f64,
    pub newton_failures: u32,
    pub contacts: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkSnapshot {
    pub singly: Vec<u32>,
    pub doubly: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFrame {
    pub step: u64,
    pub time: f64,
    pub fibers: Vec<FiberState>,
    pub diagnostics: FrameDiagnostics,
    pub network: NetworkSnapshot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryHeader {
    pub version: u32,
    pub n_fibers: u32,
    pub n_tangent: u32,
    pub n_sites: u32,
    pub config: String,
}

pub fn encode_frame(f: &TrajectoryFrame, out: &mut Vec<u8>) {
    out.extend_from_slice(FRAME_TAG);
    out.extend_from_slice(&f.step.to_le_bytes());
    out.extend_from_slice(&f.time.to_le_bytes());
    for fib in &f.fibers {
        for v in fib.tau.iter().chain(std::iter::once(&fib.midpoint)) {
            for c in v.iter() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    let d = &f.diagnostics;
    out.extend_from_slice(&d.gmres_iterations.to_le_bytes());
    out.extend_from_slice(&d.gmres_residual.to_le_bytes());
    out.extend_from_slice(&d.newton_failures.to_le_bytes());
    out.extend_from_slice(&d.contacts.to_le_bytes());
    out.extend_from_slice(&(f.network.singly.len() as u32).to_le_bytes());
    for s in &f.network.singly {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&(f.network.doubly.len() as u32).to_le_bytes());
    for (a, b) in &f.network.doubly {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of trajectory data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

fn decode_frame(c: &mut Cursor, n_fibers: usize, n_tangent: usize) -> Result<TrajectoryFrame> {
    if c.take(4)? != FRAME_TAG {
        return Err(Error::Format("missing frame tag".into()));
    }
    let step = c.u64()?;
    let time = c.f64()?;
    let mut fibers = Vec::with_capacity(n_fibers);
    for _ in 0..n_fibers {
        let tau = (0..n_tangent).map(|_| c.vec3()).collect::<Result<Vec<_>>>()?;
        let midpoint = c.vec3()?;
        fibers.push(FiberState { tau, midpoint });
    }
    let diagnostics = FrameDiagnostics {
        gmres_iterations: c.u32()?,
        gmres_residual: c.f64()?,
        newton_failures: c.u32()?,
        contacts: c.u32()?,
    };
    let ns = c.u32()? as usize;
    let singly = (0..ns).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let nd = c.u32()? as usize;
    let doubly = (0..nd).map(|_| Ok((c.u32()?, c.u32()?))).collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryFrame { step, time, fibers, diagnostics, network: NetworkSnapshot { singly, doubly } })
}

/// Frame → bytes → frame, for round-trip checks.
pub fn frame_round_trip(f: &TrajectoryFrame) -> Result<TrajectoryFrame> {
    let mut b = Vec::new();
    encode_frame(f, &mut b);
    let n = f.fibers.first().map_or(0, |x| x.tau.len());
    decode_frame(&mut Cursor { buf: &b, pos: 0 }, f.fibers.len(), n)
}

pub struct TrajectoryWriter {
    out: BufWriter<File>,
    offsets: Vec<u64>,
    pos: u64,
    header: TrajectoryHeader,
}

impl TrajectoryWriter {
    pub fn create(path: &Path, header: TrajectoryHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&header.n_fibers.to_le_bytes());
        b.extend_from_slice(&header.n_tangent.to_le_bytes());
        b.extend_from_slice(&header.n_sites.to_le_bytes());
        b.extend_from_slice(&(header.config.len() as u64).to_le_bytes());
        b.extend_from_slice(header.config.as_bytes());
        out.write_all(&b)?;
        Ok(Self { out, offsets: Vec::new(), pos: b.len() as u64, header })
    }

    pub fn write_frame(&mut self, f: &TrajectoryFrame) -> Result<()> {
        if f.fibers.len() != self.header.n_fibers as usize
            || f.fibers.iter().any(|x| x.tau.len() != self.header.n_tangent as usize)
        {
            return Err(Error::InvalidArgument("frame does not match the trajectory header".into()));
        }
        let mut b = Vec::new();
        encode_frame(f, &mut b);
        self.out.write_all(&b)?;
        self.offsets.push(self.pos);
        self.pos += b.len() as u64;
        Ok(())
    }

    /// Flushes frames written so far without closing the file.
    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize> {
        let mut b = Vec::new();
        b.extend_from_slice(INDEX_TAG);
        for o in &self.offsets {
            b.extend_from_slice(&o.to_le_bytes());
        }
        b.extend_from_slice(&(self.offsets.len() as u64).to_le_bytes());
        b.extend_from_slice(END_TAG);
        self.out.write_all(&b)?;
        self.out.flush()?;
        Ok(self.offsets.len())
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub frames: Vec<TrajectoryFrame>,
    /// Whether the footer index was present.
    pub complete: bool,
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    parse_trajectory(&buf)
}

pub fn parse_trajectory(buf: &[u8]) -> Result<Trajectory> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format("not a trajectory file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported trajectory version {version}")));
    }
    let n_fibers = c.u32()?;
    let n_tangent = c.u32()?;
    let n_sites = c.u32()?;
    let len = c.u64()? as usize;
    let config = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let header = TrajectoryHeader { version, n_fibers, n_tangent, n_sites, config };
    let (nf, nt) = (n_fibers as usize, n_tangent as usize);

    let complete = buf.len() >= 16 && &buf[buf.len() - 4..] == END_TAG;
    let mut frames = Vec::new();
    if complete {
        let n = u64::from_le_bytes(buf[buf.len() - 12..buf.len() - 4].try_into().expect("8 bytes")) as usize;
        let index_start = buf
            .len()
            .checked_sub(12 + 8 * n + 4)
            .ok_or_else(|| Error::Format("corrupt trajectory index".into()))?;
        if &buf[index_start..index_start + 4] != INDEX_TAG {
            return Err(Error::Format("corrupt trajectory index".into()));
        }
        let mut idx = Cursor { buf, pos: index_start + 4 };
        for _ in 0..n {
            let off = idx.u64()? as usize;
            frames.push(decode_frame(&mut Cursor { buf: &buf[..index_start], pos: off }, nf, nt)?);
        }
    } else {
        while c.pos + 4 <= buf.len() && &buf[c.pos..c.pos + 4] == FRAME_TAG {
            // A truncated trailing frame ends the scan.
            match decode_frame(&mut c, nf, nt) {
                Ok(f) => frames.push(f),
                Err(_) => break,
            }
        }
    }
    Ok(Trajectory { header, frames, complete })
}

/// Reads only the frame count and header, using the index when present.
pub fn frame_count(path: &Path) -> Result<usize> {
    let mut f = File::open(path)?;
    let len = f.seek(SeekFrom::End(0))?;
    if len >= 16 {
        let mut tail = [0u8; 12];
        f.seek(SeekFrom::End(-12))?;
        f.read_exact(&mut tail)?;
        if &tail[8..] == END_TAG {
            return Ok(u64::from_le_bytes(tail[..8].try_into().expect("8 bytes")) as usize);
        }
    }
    Ok(read_trajectory(path)?.frames.len())
}

/// One row per node: frame, step, time, fiber, node, x, y, z.
pub fn write_positions_csv(traj: &Trajectory, ops: &DiscretizationOps, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "frame,step,time,fiber,node,x,y,z")?;
    for (k, fr) in traj.frames.iter().enumerate() {
        for (i, fib) in fr.fibers.iter().enumerate() {
            let x = ops.positions(&fib.tau, &fib.midpoint);
            for n in 0..ops.n_x() {
                writeln!(
                    out,
                    "{k},{},{:e},{i},{n},{:e},{:e},{:e}",
                    fr.step,
                    fr.time,
                    x[3 * n],
                    x[3 * n + 1],
                    x[3 * n + 2]
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(seed: f64, nf: usize, nt: usize) -> TrajectoryFrame {
        let fibers = (0..nf)
            .map(|i| FiberState {
                tau: (0..nt).map(|p| Vector3::new(seed, i as f64, p as f64 * 1e-300).normalize()).collect(),
                midpoint: Vector3::new(seed * 3.0, -1.0 / 3.0, f64::MIN_POSITIVE),
            })
            .collect();
        TrajectoryFrame {
            step: 7,
            time: seed * 0.1,
            fibers,
            diagnostics: FrameDiagnostics { gmres_iterations: 3, gmres_residual: 1e-4, newton_failures: 1, contacts: 9 },
            network: NetworkSnapshot { singly: vec![1, 5], doubly: vec![(2, 30)] },
        }
    }

    proptest! {
        #[test]
        fn frame_bytes_round_trip(mx in -1e3f64..1e3, my in -1e3f64..1e3, t in 0.0f64..1e6, it in 0u32..1000) {
            let mut f = frame(1.0, 2, 4);
            f.fibers[1].midpoint = Vector3::new(mx, my, mx * my);
            f.time = t;
            f.diagnostics.gmres_iterations = it;
            let g = frame_round_trip(&f).unwrap();
            prop_assert_eq!(f, g);
        }
    }

    #[test]
    fn file_round_trip_with_and_without_footer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.traj");
        let header = TrajectoryHeader { version: VERSION, n_fibers: 2, n_tangent: 4, n_sites: 3, config: "fibers = 2\n".into() };
        let frames: Vec<_> = (0..5).map(|k| frame(0.3 + k as f64, 2, 4)).collect();
        let mut w = TrajectoryWriter::create(&path, header.clone()).unwrap();
        for f in &frames {
            w.write_frame(f).unwrap();
        }
        w.flush().unwrap();
        let partial = read_trajectory(&path).unwrap();
        assert!(!partial.complete);
        assert_eq!(partial.frames, frames);
        assert_eq!(w.finish().unwrap(), 5);
        let t = read_trajectory(&path).unwrap();
        assert!(t.complete);
        assert_eq!(t.header, header);
        assert_eq!(t.frames, frames);
        assert_eq!(frame_count(&path).unwrap(), 5);
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(parse_trajectory(b"NOTATRAJECTORY.........."), Err(Error::Format(_))));
    }
}
