//! Tensor container parsing.
//!
//! Two on-disk formats are supported:
//!
//! * the de-facto single-file checkpoint container: a little-endian 8-byte
//!   header length, a JSON header mapping tensor names to dtype / shape /
//!   byte ranges, then the raw payload;
//! * a trivial fixture format (`RAWTENSORS 1`): a short text header listing
//!   `name dtype d0xd1` per line, `END`, then tightly packed little-endian
//!   `f32` payload.
//!
//! Opening parses and fully validates the header — byte ranges must lie
//! inside the payload, match `dtype size × element count`, and must not
//! overlap — but no tensor data is read until a decode is requested.

use std::collections::BTreeMap;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::WeightsError;

/// Element types the reader decodes. Everything is promoted to `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub fn byte_size(&self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    fn parse(s: &str) -> Result<Self, WeightsError> {
        match s {
            "F64" => Ok(Dtype::F64),
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            other => Err(WeightsError::CorruptContainer(format!(
                "unsupported dtype {other:?}"
            ))),
        }
    }
}

/// Header entry for one tensor: dtype, shape, and payload byte range.
#[derive(Debug, Clone)]
pub struct TensorInfo {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub start: usize,
    pub end: usize,
}

/// A parsed checkpoint file: validated header plus the location of the raw
/// payload. Tensor bytes are read from disk on demand.
#[derive(Debug)]
pub struct TensorContainer {
    path: PathBuf,
    language_tag: Option<String>,
    payload_offset: u64,
    entries: BTreeMap<String, TensorInfo>,
}

#[derive(Deserialize)]
struct JsonTensorEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (u64, u64),
}

const RAW_MAGIC: &[u8] = b"RAWTENSORS 1\n";

impl TensorContainer {
    /// Opens and validates a container file of either supported format.
    pub fn open(path: &Path) -> Result<Self, WeightsError> {
        let mut file = std::fs::File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut magic = [0u8; 13];
        let is_raw = file_len >= RAW_MAGIC.len() as u64 && {
            file.read_exact(&mut magic)?;
            magic == RAW_MAGIC
        };
        file.seek(SeekFrom::Start(0))?;
        if is_raw {
            Self::parse_raw(path, file, file_len)
        } else {
            Self::parse_checkpoint(path, file, file_len)
        }
    }

    fn parse_checkpoint(
        path: &Path,
        mut file: std::fs::File,
        file_len: u64,
    ) -> Result<Self, WeightsError> {
        let corrupt = |msg: String| WeightsError::CorruptContainer(msg);
        if file_len < 8 {
            return Err(corrupt("file shorter than the 8-byte header length".into()));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes);
        let payload_offset = 8u64
            .checked_add(header_len)
            .ok_or_else(|| corrupt("header length overflows".into()))?;
        if payload_offset > file_len {
            return Err(corrupt(format!(
                "declared header length {header_len} exceeds file size {file_len}"
            )));
        }
        let payload_len = (file_len - payload_offset) as usize;
        let mut header_bytes = vec![0u8; header_len as usize];
        file.read_exact(&mut header_bytes)?;
        let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&header_bytes)
            .map_err(|e| corrupt(format!("header is not valid JSON: {e}")))?;

        let mut entries = BTreeMap::new();
        for (name, value) in header {
            if name == "__metadata__" {
                continue;
            }
            let entry: JsonTensorEntry = serde_json::from_value(value)
                .map_err(|e| corrupt(format!("bad header entry for {name:?}: {e}")))?;
            let dtype = Dtype::parse(&entry.dtype)?;
            let (start, end) = (entry.data_offsets.0 as usize, entry.data_offsets.1 as usize);
            if start > end || end > payload_len {
                return Err(corrupt(format!(
                    "tensor {name:?} byte range {start}..{end} is outside the payload of {payload_len} bytes"
                )));
            }
            let elems: usize = entry.shape.iter().product();
            let expected = elems
                .checked_mul(dtype.byte_size())
                .ok_or_else(|| corrupt(format!("tensor {name:?} size overflows")))?;
            if end - start != expected {
                return Err(corrupt(format!(
                    "tensor {name:?} occupies {} bytes but dtype and shape require {expected}",
                    end - start
                )));
            }
            entries.insert(
                name,
                TensorInfo {
                    dtype,
                    shape: entry.shape,
                    start,
                    end,
                },
            );
        }

        // non-empty ranges must not overlap
        let mut ranges: Vec<(usize, usize, &String)> = entries
            .iter()
            .filter(|(_, info)| info.start != info.end)
            .map(|(name, info)| (info.start, info.end, name))
            .collect();
        ranges.sort();
        for pair in ranges.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(corrupt(format!(
                    "tensors {} and {} overlap in the payload",
                    pair[0].2, pair[1].2
                )));
            }
        }

        Ok(Self {
            path: path.to_path_buf(),
            language_tag: None,
            payload_offset,
            entries,
        })
    }

    fn parse_raw(
        path: &Path,
        mut file: std::fs::File,
        file_len: u64,
    ) -> Result<Self, WeightsError> {
        let corrupt = |msg: String| WeightsError::CorruptContainer(msg);
        // fixture headers are small; scan the first 64 KiB for the END line
        let take = (file_len as usize).min(64 * 1024);
        let mut head = vec![0u8; take];
        file.read_exact(&mut head)?;
        let text_end = find_subslice(&head, b"\nEND\n")
            .ok_or_else(|| corrupt("raw fixture header has no END line".into()))?;
        let header = std::str::from_utf8(&head[..text_end])
            .map_err(|_| corrupt("raw fixture header is not UTF-8".into()))?;
        let payload_offset = (text_end + 5) as u64;
        let payload_len = (file_len - payload_offset) as usize;
        let mut entries = BTreeMap::new();
        let mut offset = 0usize;
        for line in header.lines().skip(1) {
            let mut parts = line.split_whitespace();
            let (name, dtype, dims) = match (parts.next(), parts.next(), parts.next()) {
                (Some(n), Some(d), Some(s)) => (n, d, s),
                _ => return Err(corrupt(format!("bad raw header line {line:?}"))),
            };
            if dtype != "F32" {
                return Err(corrupt("raw fixture format only carries F32".into()));
            }
            let shape: Vec<usize> = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| corrupt(format!("bad raw shape {dims:?}")))?;
            let nbytes = shape.iter().product::<usize>() * 4;
            if offset + nbytes > payload_len {
                return Err(corrupt(format!(
                    "raw tensor {name:?} runs past the end of the payload"
                )));
            }
            entries.insert(
                name.to_string(),
                TensorInfo {
                    dtype: Dtype::F32,
                    shape,
                    start: offset,
                    end: offset + nbytes,
                },
            );
            offset += nbytes;
        }
        Ok(Self {
            path: path.to_path_buf(),
            language_tag: None,
            payload_offset,
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Attaches the language code extracted matrices will carry.
    pub fn set_language_tag(&mut self, code: &str) {
        self.language_tag = Some(code.to_string());
    }

    pub fn language_tag(&self) -> Option<&str> {
        self.language_tag.as_deref()
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn info(&self, name: &str) -> Option<&TensorInfo> {
        self.entries.get(name)
    }

    /// Reads and decodes one tensor to `f64`, whatever the stored dtype.
    pub fn decode_f64(&self, name: &str) -> Result<Vec<f64>, WeightsError> {
        let info = self
            .info(name)
            .ok_or_else(|| WeightsError::CorruptContainer(format!("no tensor named {name:?}")))?;
        let mut file = std::fs::File::open(&self.path)?;
        file.seek(SeekFrom::Start(self.payload_offset + info.start as u64))?;
        let mut raw = vec![0u8; info.end - info.start];
        file.read_exact(&mut raw)?;
        let out = match info.dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F16 => raw
                .chunks_exact(2)
                .map(|c| f16_to_f32(u16::from_le_bytes(c.try_into().unwrap())) as f64)
                .collect(),
            Dtype::BF16 => raw
                .chunks_exact(2)
                .map(|c| {
                    f32::from_bits((u16::from_le_bytes(c.try_into().unwrap()) as u32) << 16) as f64
                })
                .collect(),
        };
        Ok(out)
    }
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

/// IEEE binary16 to binary32, including subnormals, infinities and NaNs.
fn f16_to_f32(h: u16) -> f32 {
    let sign = (h as u32 >> 15) << 31;
    let exp = (h >> 10) & 0x1f;
    let mant = (h & 0x3ff) as u32;
    let bits = match exp {
        0 => {
            if mant == 0 {
                sign
            } else {
                // renormalize a subnormal: value is mant × 2⁻²⁴
                let lz = mant.leading_zeros();
                let mant = (mant << (lz - 21)) & 0x3ff;
                let exp32 = 134 - lz;
                sign | (exp32 << 23) | (mant << 13)
            }
        }
        0x1f => sign | (0xff << 23) | (mant << 13),
        e => sign | ((e as u32 + 112) << 23) | (mant << 13),
    };
    f32::from_bits(bits)
}

/// Writes an `f32` checkpoint container; used for fixtures and round-trip
/// tests against real checkpoint tooling.
pub fn write_safetensors_f32(
    path: &Path,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> std::io::Result<()> {
    let mut header = String::from("{");
    let mut offset = 0usize;
    for (i, (name, shape, data)) in tensors.iter().enumerate() {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let nbytes = data.len() * 4;
        if i > 0 {
            header.push(',');
        }
        header.push_str(&format!(
            "\"{name}\":{{\"dtype\":\"F32\",\"shape\":[{}],\"data_offsets\":[{offset},{}]}}",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
            offset + nbytes
        ));
        offset += nbytes;
    }
    header.push('}');

    let mut file = std::fs::File::create(path)?;
    file.write_all(&(header.len() as u64).to_le_bytes())?;
    file.write_all(header.as_bytes())?;
    for (_, _, data) in tensors {
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("typosim-container-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trips_two_tensors() {
        let path = tmpfile("two.safetensors");
        write_safetensors_f32(
            &path,
            &[
                ("alpha".into(), vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]),
                ("beta".into(), vec![1, 3], vec![5.0, 6.0, 7.0]),
            ],
        )
        .unwrap();
        let c = TensorContainer::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.info("alpha").unwrap().shape, vec![2, 2]);
        assert_eq!(c.decode_f64("beta").unwrap(), vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn repeated_decodes_are_identical() {
        let path = tmpfile("repeat.safetensors");
        let data: Vec<f32> = (0..64).map(|i| (i as f32).sin()).collect();
        write_safetensors_f32(&path, &[("w".into(), vec![8, 8], data)]).unwrap();
        let c = TensorContainer::open(&path).unwrap();
        let first = c.decode_f64("w").unwrap();
        let second = c.decode_f64("w").unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn header_longer_than_file_is_corrupt() {
        let path = tmpfile("badlen.safetensors");
        let mut bytes = (1_000_000u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        std::fs::write(&path, bytes).unwrap();
        let err = TensorContainer::open(&path).unwrap_err();
        assert!(matches!(err, WeightsError::CorruptContainer(_)), "{err}");
    }

    #[test]
    fn short_payload_is_corrupt() {
        let path = tmpfile("short.safetensors");
        write_safetensors_f32(&path, &[("w".into(), vec![2, 2], vec![0.0; 4])]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4); // drop one f32
        std::fs::write(&path, &bytes).unwrap();
        let err = TensorContainer::open(&path).unwrap_err();
        assert!(matches!(err, WeightsError::CorruptContainer(_)), "{err}");
    }

    #[test]
    fn overlapping_ranges_are_corrupt() {
        let path = tmpfile("overlap.safetensors");
        let header = r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0u8; 12]);
        std::fs::write(&path, bytes).unwrap();
        let err = TensorContainer::open(&path).unwrap_err();
        assert!(matches!(err, WeightsError::CorruptContainer(_)), "{err}");
    }

    #[test]
    fn metadata_entry_is_ignored() {
        let path = tmpfile("meta.safetensors");
        let header = r#"{"__metadata__":{"format":"pt"},"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let c = TensorContainer::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.decode_f64("a").unwrap(), vec![1.0]);
    }

    #[test]
    fn raw_fixture_format_parses() {
        let path = tmpfile("fixture.raw");
        let mut bytes = b"RAWTENSORS 1\nw F32 2x3\nEND\n".to_vec();
        for v in [1f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let c = TensorContainer::open(&path).unwrap();
        assert_eq!(c.info("w").unwrap().shape, vec![2, 3]);
        assert_eq!(c.decode_f64("w").unwrap()[4], 5.0);
    }

    #[test]
    fn f16_promotion() {
        // 1.0 = 0x3c00, -2.5 = 0xc100, +inf = 0x7c00, smallest subnormal = 0x0001
        assert_eq!(f16_to_f32(0x3c00), 1.0);
        assert_eq!(f16_to_f32(0xc100), -2.5);
        assert!(f16_to_f32(0x7c00).is_infinite());
        assert_eq!(f16_to_f32(0x0001), 5.960464477539063e-8);
        assert_eq!(f16_to_f32(0x8000), -0.0);
    }
}
