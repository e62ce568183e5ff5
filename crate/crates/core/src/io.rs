//! Binary formats, all little-endian.
//!
//! * `BTR1`: `u64 N, u64 M`, then the `N` diagonal blocks, the `N-1` lower
//!   blocks and the `N-1` upper blocks, each row-major.
//! * `BVC1`: `u64 N, u64 M`, then `N*M` values.
//! * `DPLN`: a versioned dump of a [`DichotomyPlan`].
//!
//! Parsers check every length against the remaining input before allocating.

use std::io::Write;
use std::path::Path;

use crate::block::{BlockLU, BlockTriMatrix, BlockVector, Matrix, ThomasFactorization};
use crate::dichotomy::{build_partition_tree, DichotomyPlan, RangeFactors, SuperpositionFactors};
use crate::error::{Error, Result};

pub const BTR_MAGIC: &[u8; 4] = b"BTR1";
pub const BVC_MAGIC: &[u8; 4] = b"BVC1";
pub const PLAN_MAGIC: &[u8; 4] = b"DPLN";
pub const PLAN_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Cursor over untrusted bytes.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if len > self.remaining() {
            return Err(bad(format!("truncated input: need {len} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(bad(format!("expected magic {}", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("length does not fit in memory"))
    }

    /// Claim `count` doubles, failing before allocation if they are not there.
    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = count.checked_mul(8).ok_or_else(|| bad("length overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// Fail early if `count` items of `size` bytes cannot fit.
    pub(crate) fn expect_items(&self, count: usize, size: usize) -> Result<()> {
        match count.checked_mul(size) {
            Some(b) if b <= self.remaining() => Ok(()),
            _ => Err(bad(format!("input too short for {count} items"))),
        }
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    fn block(&mut self, m: usize) -> Result<Matrix> {
        let sq = m.checked_mul(m).ok_or_else(|| bad("block order overflow"))?;
        Matrix::new(m, m, self.f64s(sq)?)
    }

    fn blocks(&mut self, count: usize, m: usize) -> Result<Vec<Matrix>> {
        let sq = m.checked_mul(m).ok_or_else(|| bad("block order overflow"))?;
        self.expect_items(count, sq.checked_mul(8).ok_or_else(|| bad("block order overflow"))?)?;
        (0..count).map(|_| self.block(m)).collect()
    }
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_blocks<'a>(out: &mut Vec<u8>, blocks: impl IntoIterator<Item = &'a Matrix>) {
    for b in blocks {
        put_f64s(out, b.data());
    }
}

fn dims(r: &mut Reader) -> Result<(usize, usize)> {
    let n = r.usize()?;
    let m = r.usize()?;
    if n == 0 || m == 0 {
        return Err(bad("dimensions must be positive"));
    }
    Ok((n, m))
}

fn put_btr_body(out: &mut Vec<u8>, p: &BlockTriMatrix) {
    put_u64(out, p.n());
    put_u64(out, p.m());
    put_blocks(out, p.diags());
    put_blocks(out, p.lowers());
    put_blocks(out, p.uppers());
}

fn read_btr_body(r: &mut Reader) -> Result<BlockTriMatrix> {
    let (n, m) = dims(r)?;
    let diag = r.blocks(n, m)?;
    let lower = r.blocks(n - 1, m)?;
    let upper = r.blocks(n - 1, m)?;
    BlockTriMatrix::new(diag, lower, upper).map_err(|e| bad(format!("invalid matrix: {e}")))
}

pub fn encode_blocktri(p: &BlockTriMatrix) -> Vec<u8> {
    let mut out = BTR_MAGIC.to_vec();
    put_btr_body(&mut out, p);
    out
}

pub fn decode_blocktri(bytes: &[u8]) -> Result<BlockTriMatrix> {
    let mut r = Reader::new(bytes);
    r.magic(BTR_MAGIC)?;
    let p = read_btr_body(&mut r)?;
    r.finish()?;
    Ok(p)
}

pub fn encode_blockvec(v: &BlockVector) -> Vec<u8> {
    let mut out = BVC_MAGIC.to_vec();
    put_u64(&mut out, v.n());
    put_u64(&mut out, v.m());
    put_f64s(&mut out, &v.to_flat());
    out
}

pub fn decode_blockvec(bytes: &[u8]) -> Result<BlockVector> {
    let mut r = Reader::new(bytes);
    r.magic(BVC_MAGIC)?;
    let (n, m) = dims(&mut r)?;
    let len = n.checked_mul(m).ok_or_else(|| bad("length overflow"))?;
    let flat = r.f64s(len)?;
    r.finish()?;
    BlockVector::from_flat(n, m, &flat)
}

fn put_range(out: &mut Vec<u8>, range: &RangeFactors) {
    match &range.local {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            out.extend_from_slice(&t.fingerprint().to_le_bytes());
            for lu in t.pivots() {
                put_u64(out, lu.order());
                put_f64s(out, lu.packed());
                for &p in lu.perm() {
                    put_u64(out, p);
                }
            }
            put_blocks(out, t.gains());
            put_blocks(out, t.lowers());
            put_blocks(out, &range.factors.u);
            put_blocks(out, &range.factors.v);
        }
    }
}

fn read_range(r: &mut Reader, start: usize, len: usize, m: usize) -> Result<RangeFactors> {
    let empty = SuperpositionFactors { u: vec![], v: vec![] };
    match r.u8()? {
        0 if len == 1 => Ok(RangeFactors { start, len, local: None, factors: empty }),
        1 if len > 1 => {
            let fingerprint = r.u64()?;
            let rows = len - 1;
            r.expect_items(rows, m * m * 8)?;
            let mut pivots = Vec::with_capacity(rows);
            for _ in 0..rows {
                if r.usize()? != m {
                    return Err(bad("pivot order differs from block order"));
                }
                let lu = r.f64s(m * m)?;
                r.expect_items(m, 8)?;
                let perm = (0..m).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
                pivots.push(BlockLU::from_parts(m, lu, perm)?);
            }
            let gains = r.blocks(rows - 1, m)?;
            let lower = r.blocks(rows - 1, m)?;
            let local = ThomasFactorization::from_parts(fingerprint, pivots, gains, lower)?;
            let u = r.blocks(rows, m)?;
            let v = r.blocks(rows, m)?;
            Ok(RangeFactors { start, len, local: Some(local), factors: SuperpositionFactors { u, v } })
        }
        _ => Err(bad("range record does not match the range length")),
    }
}

pub fn encode_plan(plan: &DichotomyPlan) -> Vec<u8> {
    let mut out = PLAN_MAGIC.to_vec();
    out.extend_from_slice(&PLAN_VERSION.to_le_bytes());
    put_u64(&mut out, plan.n);
    put_u64(&mut out, plan.m);
    put_u64(&mut out, plan.ranks);
    out.extend_from_slice(&plan.fingerprint.to_le_bytes());
    put_btr_body(&mut out, &plan.matrix);
    for range in &plan.ranges {
        put_range(&mut out, range);
    }
    put_btr_body(&mut out, &plan.reduced);
    for rows in &plan.inverse_rows {
        put_u64(&mut out, rows.len());
        put_blocks(&mut out, rows);
    }
    out
}

pub fn decode_plan(bytes: &[u8]) -> Result<DichotomyPlan> {
    let mut r = Reader::new(bytes);
    r.magic(PLAN_MAGIC)?;
    let version = r.u32()?;
    if version != PLAN_VERSION {
        return Err(bad(format!("unsupported plan version {version}")));
    }
    let (n, m) = dims(&mut r)?;
    let ranks = r.usize()?;
    let fingerprint = r.u64()?;
    if ranks == 0 || ranks > n {
        return Err(bad(format!("rank count {ranks} invalid for {n} rows")));
    }
    let len = n.div_ceil(ranks);
    let padded = len * ranks;
    let matrix = read_btr_body(&mut r)?;
    if matrix.n() != padded || matrix.m() != m {
        return Err(bad("padded matrix has wrong shape"));
    }
    r.expect_items(ranks, 1)?;
    let ranges = (0..ranks)
        .map(|j| read_range(&mut r, j * len, len, m))
        .collect::<Result<Vec<_>>>()?;
    let reduced = read_btr_body(&mut r)?;
    if reduced.n() != ranks || reduced.m() != m {
        return Err(bad("reduced matrix has wrong shape"));
    }
    let tree = build_partition_tree(ranks);
    let mut inverse_rows = Vec::with_capacity(tree.nodes().len());
    for node in tree.nodes() {
        let count = r.usize()?;
        let expect = if node.kind == crate::dichotomy::NodeKind::Known { 0 } else { node.hi + 1 - node.first };
        if count != expect {
            return Err(bad("inverse row count does not match the partition tree"));
        }
        inverse_rows.push(r.blocks(count, m)?);
    }
    r.finish()?;
    Ok(DichotomyPlan { n, m, ranks, padded, fingerprint, matrix, ranges, reduced, tree, inverse_rows })
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidParameter(format!("{} is not a file", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn read_blocktri(path: &Path) -> Result<BlockTriMatrix> {
    decode_blocktri(&std::fs::read(path)?)
}

pub fn write_blocktri(path: &Path, p: &BlockTriMatrix) -> Result<()> {
    write_atomic(path, &encode_blocktri(p))
}

pub fn read_blockvec(path: &Path) -> Result<BlockVector> {
    decode_blockvec(&std::fs::read(path)?)
}

pub fn write_blockvec(path: &Path, v: &BlockVector) -> Result<()> {
    write_atomic(path, &encode_blockvec(v))
}

pub fn read_plan(path: &Path) -> Result<DichotomyPlan> {
    decode_plan(&std::fs::read(path)?)
}

pub fn write_plan(path: &Path, plan: &DichotomyPlan) -> Result<()> {
    write_atomic(path, &encode_plan(plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::testgen::*;
    use crate::dichotomy::plan_build;

    #[test]
    fn blocktri_roundtrip_is_bitwise() {
        let p = dominant(&mut rng(30), 5, 3);
        let bytes = encode_blocktri(&p);
        assert_eq!(bytes.len(), 4 + 16 + (5 + 4 + 4) * 9 * 8);
        assert_eq!(decode_blocktri(&bytes).unwrap(), p);
    }

    #[test]
    fn blockvec_roundtrip_is_bitwise() {
        let v = random_vector(&mut rng(31), 4, 2);
        assert_eq!(decode_blockvec(&encode_blockvec(&v)).unwrap(), v);
    }

    #[test]
    fn rejects_malformed_headers() {
        let p = dominant(&mut rng(32), 3, 2);
        let mut bytes = encode_blocktri(&p);
        assert!(decode_blocktri(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(decode_blocktri(&bytes).is_err());
        assert!(decode_blocktri(b"BTR2").is_err());
        let mut huge = BTR_MAGIC.to_vec();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_blocktri(&huge), Err(Error::Format(_))));
        let mut zero = BVC_MAGIC.to_vec();
        zero.extend_from_slice(&[0; 16]);
        assert!(decode_blockvec(&zero).is_err());
    }

    #[test]
    fn rejects_non_finite_matrix() {
        let mut bytes = encode_blocktri(&BlockTriMatrix::identity(2, 1));
        bytes[20..28].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_blocktri(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn plan_roundtrip_solves_identically() {
        let mut g = rng(33);
        let p = dominant(&mut g, 11, 2);
        for ranks in [1, 3, 4, 11] {
            let plan = plan_build(&p, ranks).unwrap();
            let back = decode_plan(&encode_plan(&plan)).unwrap();
            assert!(back == plan, "ranks = {ranks}");
            let f = random_vector(&mut g, 11, 2);
            assert_eq!(back.solve(&f).unwrap(), plan.solve(&f).unwrap());
        }
    }

    #[test]
    fn plan_truncations_fail_cleanly() {
        let plan = plan_build(&dominant(&mut rng(34), 6, 2), 2).unwrap();
        let bytes = encode_plan(&plan);
        for cut in (0..bytes.len()).step_by(7) {
            assert!(decode_plan(&bytes[..cut]).is_err());
        }
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(decode_plan(&wrong).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = std::env::temp_dir().join(format!("blocktri-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("v.bvc");
        let v = BlockVector::zeros(2, 2);
        write_blockvec(&path, &v).unwrap();
        write_blockvec(&path, &v).unwrap();
        assert_eq!(read_blockvec(&path).unwrap(), v);
        assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
