//! Bit-exact binary artifact formats.
//!
//! Tensor file: `"AATN"`, u32 rank, u64 dims[rank], little-endian f64
//! payload in row-major order. An empty rank-1 tensor is exactly 16 bytes.
//!
//! Checkpoint: `"AATC"`, u32 entry count, entries sorted by name as
//! `(u32 name length, name bytes, tensor file block)`, then a trailing u64
//! FNV-1a checksum of all prior bytes. Entry names are unique.
//!
//! IDX: the classic big-endian image/label format (magic 0x00000803 /
//! 0x00000801) with pixels scaled to `[0, 1]` on load.
//!
//! All parsers validate sizes before allocating, so corrupted or truncated
//! inputs produce structured errors rather than crashes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, FormatErrorKind, Result};
use crate::model::{Backbone, Classifier, Head, HeadKind};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"AATN";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AATC";
const IDX_IMAGES_MAGIC: [u8; 4] = [0, 0, 8, 3];
const IDX_LABELS_MAGIC: [u8; 4] = [0, 0, 8, 1];

/// Incremental 64-bit FNV-1a hasher.
pub struct Fnv64 {
    state: u64,
}

impl Fnv64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv64 {
            state: Self::OFFSET,
        }
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv64::new();
    h.write(bytes);
    h.finish()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(FormatErrorKind::Truncated {
                needed: n,
                available: self.remaining(),
            }));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64_le(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("len 8")))
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + t.shape().len() * 8 + t.len() * 8);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse one tensor block from the front of `buf`, returning the tensor and
/// the number of bytes consumed.
pub fn tensor_from_bytes(buf: &[u8]) -> Result<(Tensor, usize)> {
    let mut r = Reader::new(buf);
    let magic = r.take(4)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::format(FormatErrorKind::BadMagic {
            expected: TENSOR_MAGIC,
            found: magic.try_into().expect("len 4"),
        }));
    }
    let rank = r.u32_le()? as usize;
    // Bound the dims read before allocating anything rank-sized.
    if r.remaining() < rank * 8 {
        return Err(Error::format(FormatErrorKind::Truncated {
            needed: rank * 8,
            available: r.remaining(),
        }));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u64_le()?);
    }
    let overflow = || Error::format(FormatErrorKind::DimOverflow { dims: dims.clone() });
    let mut product: u64 = 1;
    for &d in &dims {
        product = product.checked_mul(d).ok_or_else(overflow)?;
    }
    let payload_bytes = product.checked_mul(8).ok_or_else(overflow)?;
    let payload_bytes = usize::try_from(payload_bytes).map_err(|_| overflow())?;
    let payload = r.take(payload_bytes)?;
    let shape: Vec<usize> = dims
        .iter()
        .map(|&d| usize::try_from(d).map_err(|_| overflow()))
        .collect::<Result<_>>()?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("len 8")))
        .collect();
    let tensor = Tensor::new(shape, data).expect("product matches payload");
    Ok((tensor, r.pos))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &tensor_to_bytes(t))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let (tensor, consumed) = tensor_from_bytes(&bytes).map_err(|e| e.with_path(path))?;
    if consumed != bytes.len() {
        return Err(Error::format(FormatErrorKind::TrailingBytes {
            extra: bytes.len() - consumed,
        })
        .with_path(path));
    }
    Ok(tensor)
}

/// Serialize named tensors: sorted entries, trailing FNV-1a checksum.
pub fn entries_to_bytes(entries: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&tensor_to_bytes(t));
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn entries_from_bytes(buf: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader::new(buf);
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(FormatErrorKind::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic.try_into().expect("len 4"),
        }));
    }
    if buf.len() < 16 {
        return Err(Error::format(FormatErrorKind::Truncated {
            needed: 16,
            available: buf.len(),
        }));
    }
    // Verify integrity before trusting any length fields.
    let body = &buf[..buf.len() - 8];
    let stored = u64::from_le_bytes(buf[buf.len() - 8..].try_into().expect("len 8"));
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::format(FormatErrorKind::ChecksumMismatch {
            stored,
            computed,
        }));
    }
    let mut r2 = Reader::new(&body[4..]);
    let count = r2.u32_le()? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let name_len = r2.u32_le()? as usize;
        let name_bytes = r2.take(name_len)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format(FormatErrorKind::InvalidName))?
            .to_string();
        let rest = &body[4 + r2.pos..];
        let (tensor, consumed) = tensor_from_bytes(rest)?;
        r2.pos += consumed;
        if entries.insert(name.clone(), tensor).is_some() {
            return Err(Error::format(FormatErrorKind::DuplicateEntry { name }));
        }
    }
    if r2.remaining() != 0 {
        return Err(Error::format(FormatErrorKind::TrailingBytes {
            extra: r2.remaining(),
        }));
    }
    Ok(entries)
}

fn usize_from_meta(v: f64, what: &str) -> Result<usize> {
    if !v.is_finite() || v < 0.0 || v.fract() != 0.0 || v > (1u64 << 53) as f64 {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: format!("{what} = {v} is not a valid dimension"),
        }));
    }
    Ok(v as usize)
}

/// Parameter and metadata entries for one classifier.
pub fn classifier_entries(clf: &Classifier) -> BTreeMap<String, Tensor> {
    let mut entries = BTreeMap::new();
    for (name, t) in clf.params() {
        entries.insert(name, t.clone());
    }
    entries.insert(
        "meta.layer_dims".to_string(),
        Tensor::vector(clf.backbone.layer_dims.iter().map(|&d| d as f64).collect()),
    );
    entries.insert(
        "meta.classes".to_string(),
        Tensor::scalar(clf.classes() as f64),
    );
    let (kind, scale) = match &clf.head {
        Head::Hypersphere { scale, .. } => (0.0, *scale),
        Head::PlainLinear { .. } => (1.0, 0.0),
    };
    entries.insert("meta.head_kind".to_string(), Tensor::scalar(kind));
    entries.insert("meta.scale".to_string(), Tensor::scalar(scale));
    entries
}

fn expected_names(layer_count: usize, head: HeadKind) -> Vec<String> {
    let mut names = vec![
        "meta.layer_dims".to_string(),
        "meta.classes".to_string(),
        "meta.head_kind".to_string(),
        "meta.scale".to_string(),
    ];
    for i in 0..layer_count {
        names.push(format!("layer{i}.weight"));
        names.push(format!("layer{i}.bias"));
    }
    names.push("head.weight".to_string());
    if head == HeadKind::PlainLinear {
        names.push("head.bias".to_string());
    }
    names.sort();
    names
}

fn require<'a>(
    entries: &'a BTreeMap<String, Tensor>,
    expected: &[String],
) -> Result<Vec<&'a Tensor>> {
    let missing: Vec<String> = expected
        .iter()
        .filter(|n| !entries.contains_key(*n))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::format(FormatErrorKind::MissingEntries {
            expected: expected.to_vec(),
            missing,
        }));
    }
    Ok(expected.iter().map(|n| &entries[n]).collect())
}

fn shape_check(name: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
        }));
    }
    Ok(())
}

pub fn classifier_from_entries(entries: &BTreeMap<String, Tensor>) -> Result<Classifier> {
    require(
        entries,
        &[
            "meta.layer_dims".to_string(),
            "meta.classes".to_string(),
            "meta.head_kind".to_string(),
            "meta.scale".to_string(),
        ],
    )?;
    let layer_dims: Vec<usize> = entries["meta.layer_dims"]
        .data()
        .iter()
        .map(|&v| usize_from_meta(v, "meta.layer_dims"))
        .collect::<Result<_>>()?;
    if layer_dims.is_empty() || layer_dims.contains(&0) {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: format!("meta.layer_dims {layer_dims:?} must be nonempty and positive"),
        }));
    }
    let classes = usize_from_meta(entries["meta.classes"].data()[0], "meta.classes")?;
    if classes == 0 {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: "meta.classes must be >= 1".to_string(),
        }));
    }
    let head_raw = entries["meta.head_kind"].data()[0];
    let head_kind = if head_raw == 0.0 {
        HeadKind::Hypersphere
    } else if head_raw == 1.0 {
        HeadKind::PlainLinear
    } else {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: format!("meta.head_kind = {head_raw} is not 0 or 1"),
        }));
    };
    let scale = entries["meta.scale"].data()[0];
    if head_kind == HeadKind::Hypersphere && !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: format!("meta.scale = {scale} must be positive"),
        }));
    }

    let layer_count = layer_dims.len() - 1;
    let expected = expected_names(layer_count, head_kind);
    require(entries, &expected)?;

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for i in 0..layer_count {
        let w = &entries[&format!("layer{i}.weight")];
        let b = &entries[&format!("layer{i}.bias")];
        shape_check(
            &format!("layer{i}.weight"),
            w,
            &[layer_dims[i], layer_dims[i + 1]],
        )?;
        shape_check(&format!("layer{i}.bias"), b, &[layer_dims[i + 1]])?;
        weights.push(w.clone());
        biases.push(b.clone());
    }
    let feature_dim = *layer_dims.last().expect("nonempty");
    let head_w = &entries["head.weight"];
    shape_check("head.weight", head_w, &[feature_dim, classes])?;
    let head = match head_kind {
        HeadKind::Hypersphere => Head::Hypersphere {
            w: head_w.clone(),
            scale,
        },
        HeadKind::PlainLinear => {
            let head_b = &entries["head.bias"];
            shape_check("head.bias", head_b, &[classes])?;
            Head::PlainLinear {
                w: head_w.clone(),
                b: head_b.clone(),
            }
        }
    };
    Ok(Classifier {
        backbone: Backbone {
            layer_dims,
            weights,
            biases,
        },
        head,
    })
}

pub fn checkpoint_to_bytes(clf: &Classifier) -> Vec<u8> {
    entries_to_bytes(&classifier_entries(clf))
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Classifier> {
    classifier_from_entries(&entries_from_bytes(buf)?)
}

pub fn save_checkpoint(clf: &Classifier, path: &Path) -> Result<()> {
    write_file(path, &checkpoint_to_bytes(clf))
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    let bytes = read_file(path)?;
    checkpoint_from_bytes(&bytes).map_err(|e| e.with_path(path))
}

/// Load IDX images as a `(count, rows*cols)` tensor scaled to `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    parse_idx_images(&bytes).map_err(|e| e.with_path(path))
}

fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(FormatErrorKind::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic.try_into().expect("len 4"),
        }));
    }
    let count = r.u32_be()? as u64;
    let rows = r.u32_be()? as u64;
    let cols = r.u32_be()? as u64;
    let total = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| {
            Error::format(FormatErrorKind::DimOverflow {
                dims: vec![count, rows, cols],
            })
        })?;
    let pixels = r.take(total)?;
    if r.remaining() != 0 {
        return Err(Error::format(FormatErrorKind::TrailingBytes {
            extra: r.remaining(),
        }));
    }
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Tensor::new(vec![count as usize, (rows * cols) as usize], data)
}

/// Load IDX labels as class indices.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    parse_idx_labels(&bytes).map_err(|e| e.with_path(path))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(FormatErrorKind::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic.try_into().expect("len 4"),
        }));
    }
    let count = r.u32_be()? as usize;
    let labels = r.take(count)?;
    if r.remaining() != 0 {
        return Err(Error::format(FormatErrorKind::TrailingBytes {
            extra: r.remaining(),
        }));
    }
    Ok(labels.iter().map(|&b| b as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, ModelSpec};
    use proptest::prelude::*;

    #[test]
    fn fnv_matches_the_reference_vector() {
        assert_eq!(fnv1a64(b"abc"), 0xe71f_a219_0541_574b);
    }

    #[test]
    fn empty_rank1_tensor_is_16_bytes_and_round_trips() {
        let t = Tensor::new(vec![0], vec![]).unwrap();
        let bytes = tensor_to_bytes(&t);
        assert_eq!(bytes.len(), 16);
        let (back, consumed) = tensor_from_bytes(&bytes).unwrap();
        assert_eq!(consumed, 16);
        assert_eq!(back, t);
    }

    #[test]
    fn matrix_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.aat");
        let t = Tensor::from_rows(&[vec![1.5, -2.5], vec![0.0, 3.25]]).unwrap();
        save_tensor(&path, &t).unwrap();
        assert_eq!(load_tensor(&path).unwrap(), t);
    }

    #[test]
    fn corrupted_magic_is_a_bad_magic_error() {
        let t = Tensor::vector(vec![1.0]);
        let mut bytes = tensor_to_bytes(&t);
        bytes[0] = b'X';
        let err = tensor_from_bytes(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Format {
                kind: FormatErrorKind::BadMagic { .. },
                ..
            }
        ));
    }

    #[test]
    fn truncation_is_detected_without_allocation() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let bytes = tensor_to_bytes(&t);
        for cut in 0..bytes.len() {
            let err = match tensor_from_bytes(&bytes[..cut]) {
                Err(e) => e,
                Ok((_, consumed)) => {
                    panic!("truncated load at {cut} returned Ok consuming {consumed}")
                }
            };
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn huge_dims_overflow_cleanly() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&TENSOR_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&8u64.to_le_bytes());
        let err = tensor_from_bytes(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Format {
                kind: FormatErrorKind::DimOverflow { .. },
                ..
            }
        ));
    }

    fn sample_classifier() -> Classifier {
        init_parameters(
            &ModelSpec {
                layer_dims: vec![4, 6, 3],
                classes: 3,
                head: crate::model::HeadKind::Hypersphere,
                scale: 15.0,
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        let clf = sample_classifier();
        let bytes = checkpoint_to_bytes(&clf);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, clf);
        assert_eq!(checkpoint_to_bytes(&back), bytes);
    }

    #[test]
    fn flipped_payload_bit_fails_the_checksum() {
        let clf = sample_classifier();
        let mut bytes = checkpoint_to_bytes(&clf);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        let err = checkpoint_from_bytes(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Format {
                kind: FormatErrorKind::ChecksumMismatch { .. },
                ..
            }
        ));
    }

    #[test]
    fn missing_entry_lists_expected_names() {
        let clf = sample_classifier();
        let mut entries = classifier_entries(&clf);
        entries.remove("layer1.weight");
        let err = classifier_from_entries(&entries).unwrap_err();
        match err {
            Error::Format {
                kind: FormatErrorKind::MissingEntries { expected, missing },
                ..
            } => {
                assert!(missing.contains(&"layer1.weight".to_string()));
                assert!(expected.contains(&"head.weight".to_string()));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn plain_head_checkpoints_round_trip() {
        let clf = init_parameters(
            &ModelSpec {
                layer_dims: vec![3, 2],
                classes: 4,
                head: crate::model::HeadKind::PlainLinear,
                scale: 15.0,
            },
            5,
        )
        .unwrap();
        let back = checkpoint_from_bytes(&checkpoint_to_bytes(&clf)).unwrap();
        assert_eq!(back, clf);
    }

    #[test]
    fn idx_images_and_labels_parse_and_scale() {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC);
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend((0u8..12).map(|v| v * 20));
        let t = parse_idx_images(&img).unwrap();
        assert_eq!(t.shape(), &[2, 6]);
        assert!((t.data()[1] - 20.0 / 255.0).abs() < 1e-15);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC);
        lab.extend_from_slice(&3u32.to_be_bytes());
        lab.extend_from_slice(&[0, 2, 1]);
        assert_eq!(parse_idx_labels(&lab).unwrap(), vec![0, 2, 1]);

        let err = parse_idx_labels(&img).unwrap_err();
        assert!(matches!(
            err,
            Error::Format {
                kind: FormatErrorKind::BadMagic { .. },
                ..
            }
        ));
    }

    proptest! {
        #[test]
        fn tensor_bytes_round_trip_bitwise(
            shape in proptest::collection::vec(0usize..5, 0..3),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            // Arbitrary bit patterns (including NaNs) must survive unchanged.
            let data: Vec<f64> = (0..n as u64)
                .map(|i| f64::from_bits(seed.wrapping_mul(i.wrapping_add(0x9e37)).rotate_left(i as u32)))
                .collect();
            let t = Tensor::new(shape, data).unwrap();
            let bytes = tensor_to_bytes(&t);
            let (back, consumed) = tensor_from_bytes(&bytes).unwrap();
            prop_assert_eq!(consumed, bytes.len());
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
