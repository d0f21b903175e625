//! Binary file formats: checkpoints, datasets, and P5 image grids.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use devae_core::data::{FactorDataset, FactorSpace, FactorSpec};
use devae_core::optim::AdamState;
use devae_core::Tensor;

use crate::config::RunConfig;
use crate::error::{LabError, LabResult};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DEVAE\x01";
const DATASET_TAG: &str = "DEVAE-DATA 1";

/// Model parameters and optimizer state at an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub iteration: u64,
    pub params: Vec<Tensor>,
    pub adam: AdamState,
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> LabResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LabError::Data("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> LabResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> LabResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> LabResult<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(LabError::Data(format!("tensor rank {ndim} is implausible")));
        }
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<LabResult<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|&n| n <= (self.bytes.len() - self.pos) / 8);
        let n = n.ok_or_else(|| LabError::Data("tensor larger than the file".into()))?;
        let data =
            self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Tensor::new(shape, data)?)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "{}iteration = {}\nadam_step = {}\ntensors = {}\n",
            self.config.to_text(),
            self.iteration,
            self.adam.step,
            self.params.len()
        );
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        for t in self.params.iter().chain(&self.adam.m).chain(&self.adam.v) {
            put_tensor(&mut buf, t);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> LabResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(LabError::Data("not a checkpoint (bad magic)".into()));
        }
        let len = r.u64()? as usize;
        let header = std::str::from_utf8(r.take(len)?).map_err(|_| LabError::Data("header is not UTF-8".into()))?;
        let mut config_text = String::new();
        let (mut iteration, mut step, mut count) = (None, None, None);
        for line in header.lines() {
            let parsed =
                |v: &str| v.trim().parse::<u64>().map_err(|_| LabError::Data(format!("bad header line `{line}`")));
            match line.split_once('=').map(|(k, v)| (k.trim(), v)) {
                Some(("iteration", v)) => iteration = Some(parsed(v)?),
                Some(("adam_step", v)) => step = Some(parsed(v)?),
                Some(("tensors", v)) => count = Some(parsed(v)? as usize),
                _ => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
            }
        }
        let missing = || LabError::Data("checkpoint header is incomplete".into());
        let (iteration, step, count) =
            (iteration.ok_or_else(missing)?, step.ok_or_else(missing)?, count.ok_or_else(missing)?);
        let config = RunConfig::parse(&config_text).map_err(|e| LabError::Data(format!("checkpoint config: {e}")))?;
        let mut all = Vec::with_capacity(3 * count);
        for _ in 0..3 * count {
            all.push(r.tensor()?);
        }
        if r.pos != bytes.len() {
            return Err(LabError::Data("trailing bytes after the last tensor".into()));
        }
        let v = all.split_off(2 * count);
        let m = all.split_off(count);
        Ok(Checkpoint { config, iteration, params: all, adam: AdamState { m, v, step } })
    }

    /// Write atomically: a crash mid-write leaves the previous checkpoint intact.
    pub fn save(&self, path: &Path) -> LabResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        Self::from_bytes(&fs::read(path).map_err(LabError::io(path))?)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> LabResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(LabError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(LabError::io(path))
}

/// Header line, packed image bits (MSB first, each image padded to a whole
/// byte), then the label matrix as little-endian `i32`.
pub fn dataset_to_bytes(ds: &FactorDataset, seed: u64) -> Vec<u8> {
    let specs = devae_core::data::specs_to_string(ds.space().specs());
    let header = format!(
        "{DATASET_TAG} resolution={} channels={} factors={specs} seed={seed} count={}\n",
        ds.resolution(),
        ds.channels(),
        ds.len()
    );
    let mut buf = header.into_bytes();
    for i in 0..ds.len() {
        for chunk in ds.image(i).chunks(8) {
            let byte = chunk.iter().enumerate().fold(0u8, |b, (k, &p)| b | (p << (7 - k)));
            buf.push(byte);
        }
    }
    for &l in ds.all_labels() {
        buf.extend_from_slice(&(l as i32).to_le_bytes());
    }
    buf
}

pub fn dataset_from_bytes(bytes: &[u8]) -> LabResult<FactorDataset> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| LabError::Data("dataset header missing".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| LabError::Data("dataset header is not UTF-8".into()))?;
    let rest = header.strip_prefix(DATASET_TAG).ok_or_else(|| LabError::Data("not a dataset file".into()))?;
    let field = |name: &str| -> LabResult<&str> {
        rest.split_whitespace()
            .find_map(|kv| kv.strip_prefix(name).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| LabError::Data(format!("dataset header lacks `{name}`")))
    };
    let num = |name: &str| -> LabResult<usize> {
        field(name)?.parse().map_err(|_| LabError::Data(format!("dataset header: bad `{name}`")))
    };
    let (res, channels, count) = (num("resolution")?, num("channels")?, num("count")?);
    if channels != 1 {
        return Err(LabError::Data(format!("{channels}-channel datasets are not supported")));
    }
    let space =
        FactorSpace::new(FactorSpec::parse_list(field("factors")?).map_err(|e| LabError::Data(e.to_string()))?)?;
    if space.len() != count {
        return Err(LabError::Data(format!("count {count} disagrees with factor product {}", space.len())));
    }
    let px = res * res;
    let per_image = px.div_ceil(8);
    let f = space.num_factors();
    let body = &bytes[nl + 1..];
    if body.len() != count * per_image + count * f * 4 {
        return Err(LabError::Data("dataset body has the wrong size".into()));
    }
    let (bits, labels_raw) = body.split_at(count * per_image);
    let mut pixels = Vec::with_capacity(count * px);
    for img in bits.chunks_exact(per_image) {
        pixels.extend((0..px).map(|k| (img[k / 8] >> (7 - k % 8)) & 1));
    }
    let labels = labels_raw
        .chunks_exact(4)
        .map(|c| {
            let v = i32::from_le_bytes(c.try_into().expect("4 bytes"));
            u32::try_from(v).map_err(|_| LabError::Data("negative label".into()))
        })
        .collect::<LabResult<Vec<u32>>>()?;
    Ok(FactorDataset::from_parts(space, res, pixels, labels)?)
}

/// Grayscale grid of `rows × cols` square tiles of side `tile` (values in [0,1]).
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub tile: usize,
    pub pixels: Vec<u8>,
    /// Written as `#` lines in the image header.
    pub comments: Vec<String>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, tile: usize) -> Self {
        Grid { rows, cols, tile, pixels: vec![0; rows * cols * tile * tile], comments: Vec::new() }
    }

    pub fn width(&self) -> usize {
        self.cols * self.tile
    }

    pub fn height(&self) -> usize {
        self.rows * self.tile
    }

    /// Place an image of intensities in [0,1] at tile `(r, c)`.
    pub fn put(&mut self, r: usize, c: usize, img: &[f64]) {
        let (t, w) = (self.tile, self.width());
        for y in 0..t {
            for x in 0..t {
                let v = (img[y * t + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                self.pixels[(r * t + y) * w + c * t + x] = v;
            }
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut head = String::from("P5\n");
        for c in &self.comments {
            c.lines().for_each(|l| head.push_str(&format!("# {l}\n")));
        }
        head.push_str(&format!("{} {}\n255\n", self.width(), self.height()));
        let mut out = head.into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> LabResult<()> {
        let file = fs::File::create(path).map_err(LabError::io(path))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_pgm()).and_then(|_| w.flush()).map_err(LabError::io(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use devae_core::data::generate_dataset;

    #[test]
    fn dataset_bytes_round_trip() {
        let specs = FactorSpec::parse_list("posX:3,posY:2,scale:2").unwrap();
        let ds = generate_dataset(&specs, 10, 0).unwrap();
        let back = dataset_from_bytes(&dataset_to_bytes(&ds, 0)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_dataset_is_a_data_error() {
        let specs = FactorSpec::parse_list("posX:3").unwrap();
        let bytes = dataset_to_bytes(&generate_dataset(&specs, 8, 0).unwrap(), 0);
        assert!(matches!(dataset_from_bytes(&bytes[..bytes.len() - 1]), Err(LabError::Data(_))));
    }

    #[test]
    fn pgm_header_and_size() {
        let mut g = Grid::new(2, 3, 4);
        g.put(1, 2, &[1.0; 16]);
        let pgm = g.to_pgm();
        assert!(pgm.starts_with(b"P5\n12 8\n255\n"));
        assert_eq!(pgm.len(), b"P5\n12 8\n255\n".len() + 96);
        assert_eq!(*pgm.last().unwrap(), 255);
        g.comments.push("seed = 3\nbetas = 1,40".into());
        assert!(g.to_pgm().starts_with(b"P5\n# seed = 3\n# betas = 1,40\n12 8\n255\n"));
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        assert!(matches!(Checkpoint::from_bytes(b"NOPE\x01\x00"), Err(LabError::Data(_))));
    }
}
