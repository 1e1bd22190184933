//! Binary dictionary files.
//!
//! Layout, all integers `u64` and floats `f64` little endian:
//!
//! ```text
//! magic "PMOPTRBD" | version u32 | fingerprint [u8; 32] | breakpoints | cube count | cubes
//! ```
//!
//! Each cube is a tag byte, `1` followed by the reduced model or `0` followed
//! by the training error message. The fingerprint identifies the full order
//! model the dictionary was trained on; loading against another model fails.

use std::path::Path;

use pmopt_core::geom::ParamVector;
use pmopt_core::math::DenseMatrix;
use pmopt_core::rb::{Breakpoints, Cube, Dictionary, ReducedModel};
use sha2::{Digest, Sha256};

use crate::error::{Result, RunError};

const MAGIC: &[u8; 8] = b"PMOPTRBD";
pub const FORMAT_VERSION: u32 = 1;

pub type Fingerprint = [u8; 32];

/// Fingerprint of anything with a stable `Debug` form, e.g. the tuple of
/// options a model was built from.
pub fn fingerprint<T: std::fmt::Debug>(what: &T) -> Fingerprint {
    Sha256::digest(format!("{what:?}").as_bytes()).into()
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn point(&mut self, p: &ParamVector) {
        p.0.iter().for_each(|x| self.f64(*x));
    }
    fn matrix(&mut self, m: &DenseMatrix) {
        self.usize(m.rows);
        self.usize(m.cols);
        self.f64s(&m.data);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.usize(b.len());
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

type Decode<T> = std::result::Result<T, String>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Decode<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated file")?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u64(&mut self) -> Decode<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Decode<usize> {
        usize::try_from(self.u64()?).map_err(|_| "length overflows".to_string())
    }
    /// A length, checked against the bytes left so corrupt input cannot
    /// trigger huge allocations.
    fn len(&mut self, item_size: usize) -> Decode<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_size) > self.buf.len() - self.at {
            return Err("length exceeds file size".into());
        }
        Ok(n)
    }
    fn f64(&mut self) -> Decode<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Decode<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn point(&mut self) -> Decode<ParamVector> {
        Ok(ParamVector([self.f64()?, self.f64()?, self.f64()?]))
    }
    fn matrix(&mut self) -> Decode<DenseMatrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let data = self.f64s()?;
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err("matrix shape does not match its data".into());
        }
        Ok(DenseMatrix { rows, cols, data })
    }
    fn bytes(&mut self) -> Decode<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
}

fn write_model(w: &mut Writer, m: &ReducedModel) {
    m.cube.lo.iter().chain(&m.cube.hi).for_each(|x| w.f64(*x));
    w.point(&m.anchor);
    w.usize(m.basis.len());
    m.basis.iter().for_each(|b| w.f64s(b));
    w.matrix(&m.k0);
    w.usize(m.stiffness.len());
    for (i, k) in &m.stiffness {
        w.usize(*i);
        w.matrix(k);
    }
    w.f64s(&m.j0);
    w.usize(m.sources.len());
    for (i, s) in &m.sources {
        w.usize(*i);
        w.f64s(s);
    }
    w.f64s(&m.qoi);
    w.matrix(&m.residual_factor);
    w.usize(m.anchor_metrics.len());
    m.anchor_metrics.iter().flatten().flatten().for_each(|x| w.f64(*x));
    w.f64(m.qoi_dual_norm);
    w.f64(m.scale);
    w.usize(m.snapshots.len());
    m.snapshots.iter().for_each(|p| w.point(p));
    w.f64s(&m.greedy_history);
}

fn read_model(r: &mut Reader) -> Decode<ReducedModel> {
    let lo = [r.f64()?, r.f64()?, r.f64()?];
    let hi = [r.f64()?, r.f64()?, r.f64()?];
    let anchor = r.point()?;
    let n = r.len(8)?;
    let basis = (0..n).map(|_| r.f64s()).collect::<Decode<Vec<_>>>()?;
    let k0 = r.matrix()?;
    let n = r.len(8)?;
    let stiffness = (0..n).map(|_| Ok((r.usize()?, r.matrix()?))).collect::<Decode<Vec<_>>>()?;
    let j0 = r.f64s()?;
    let n = r.len(8)?;
    let sources = (0..n).map(|_| Ok((r.usize()?, r.f64s()?))).collect::<Decode<Vec<_>>>()?;
    let qoi = r.f64s()?;
    let residual_factor = r.matrix()?;
    let n = r.len(32)?;
    let anchor_metrics =
        (0..n).map(|_| Ok([[r.f64()?, r.f64()?], [r.f64()?, r.f64()?]])).collect::<Decode<Vec<_>>>()?;
    let qoi_dual_norm = r.f64()?;
    let scale = r.f64()?;
    let n = r.len(24)?;
    let snapshots = (0..n).map(|_| r.point()).collect::<Decode<Vec<_>>>()?;
    let greedy_history = r.f64s()?;
    let d = basis.len();
    if k0.rows != d || k0.cols != d || j0.len() != d || qoi.len() != d {
        return Err("reduced model blocks do not match the basis size".into());
    }
    Ok(ReducedModel {
        cube: Cube { lo, hi },
        anchor,
        basis,
        k0,
        stiffness,
        j0,
        sources,
        qoi,
        residual_factor,
        anchor_metrics,
        qoi_dual_norm,
        scale,
        snapshots,
        greedy_history,
    })
}

pub fn encode(dict: &Dictionary, print: &Fingerprint) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.0.extend_from_slice(print);
    dict.breakpoints.0.iter().for_each(|b| w.f64s(b));
    w.usize(dict.cubes.len());
    for (i, c) in dict.cubes.iter().enumerate() {
        match c {
            Some(m) => {
                w.0.push(1);
                write_model(&mut w, m);
            }
            None => {
                w.0.push(0);
                let msg = dict.failures.iter().find(|(j, _)| *j == i).map_or("", |(_, m)| m.as_str());
                w.bytes(msg.as_bytes());
            }
        }
    }
    w.0
}

/// Decodes a dictionary trained on the model with fingerprint `expected`.
pub fn decode(buf: &[u8], expected: &Fingerprint) -> std::result::Result<Dictionary, String> {
    let mut r = Reader { buf, at: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a dictionary file".into());
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!("format version {version}, expected {FORMAT_VERSION}"));
    }
    if r.take(32)? != expected {
        return Err("trained on a different model (geometry, mesh or materials differ)".into());
    }
    let breakpoints = Breakpoints([r.f64s()?, r.f64s()?, r.f64s()?]);
    breakpoints.validate().map_err(|e| e.to_string())?;
    let n = r.len(1)?;
    if n != breakpoints.len() {
        return Err(format!("{n} cubes for a partition of {}", breakpoints.len()));
    }
    let mut cubes = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for i in 0..n {
        match r.take(1)?[0] {
            1 => cubes.push(Some(read_model(&mut r)?)),
            0 => {
                failures.push((i, String::from_utf8_lossy(r.bytes()?).into_owned()));
                cubes.push(None);
            }
            t => return Err(format!("bad cube tag {t}")),
        }
    }
    if r.at != buf.len() {
        return Err("trailing bytes".into());
    }
    Ok(Dictionary { breakpoints, cubes, failures })
}

pub fn save(path: &Path, dict: &Dictionary, print: &Fingerprint) -> Result<()> {
    std::fs::write(path, encode(dict, print)).map_err(|e| RunError::io(path, e))
}

pub fn load(path: &Path, expected: &Fingerprint) -> Result<Dictionary> {
    let buf = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    decode(&buf, expected).map_err(|reason| RunError::Dictionary { path: path.to_path_buf(), reason })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dictionary {
        let m = ReducedModel {
            cube: Cube { lo: [1.0, 2.0, 3.0], hi: [4.0, 5.0, 6.0] },
            anchor: ParamVector::new(2.5, 3.5, 4.5),
            basis: vec![vec![1.0, -0.0, 3.5], vec![f64::MIN_POSITIVE, 2.0, 1e300]],
            k0: DenseMatrix::identity(2),
            stiffness: vec![(7, DenseMatrix { rows: 2, cols: 2, data: vec![1.0, 2.0, 2.0, 5.0] })],
            j0: vec![0.25, -0.5],
            sources: vec![(3, vec![1.0, 1.0])],
            qoi: vec![9.0, 8.0],
            residual_factor: DenseMatrix { rows: 1, cols: 3, data: vec![1.0, 2.0, 3.0] },
            anchor_metrics: vec![[[1.0, 0.1], [0.1, 2.0]]],
            qoi_dual_norm: 0.7,
            scale: 12.0,
            snapshots: vec![ParamVector::new(1.0, 2.0, 3.0)],
            greedy_history: vec![1.0, 0.01],
        };
        Dictionary {
            breakpoints: Breakpoints([vec![0.0, 1.0, 2.0], vec![0.0, 1.0], vec![0.0, 1.0]]),
            cubes: vec![Some(m), None],
            failures: vec![(1, "no admissible point".into())],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let d = tiny();
        let print = fingerprint(&"model");
        let back = decode(&encode(&d, &print), &print).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn other_model_is_refused() {
        let d = tiny();
        let err = decode(&encode(&d, &fingerprint(&1)), &fingerprint(&2)).unwrap_err();
        assert!(err.contains("different model"), "{err}");
    }

    #[test]
    fn damaged_files_are_refused() {
        let print = fingerprint(&0);
        let bytes = encode(&tiny(), &print);
        for cut in [0, 7, 12, 44, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode(&bytes[..cut], &print).is_err(), "cut at {cut}");
        }
        let mut bumped = bytes.clone();
        bumped[8] = 9;
        assert!(decode(&bumped, &print).unwrap_err().contains("version"));
        let mut longer = bytes;
        longer.push(0);
        assert!(decode(&longer, &print).is_err());
    }
}
