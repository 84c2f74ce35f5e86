//! NPY array headers and little-endian element decoding.

use std::io::{self, Read};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Dtype {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    U64,
    I64,
    F32,
    F64,
}

impl Dtype {
    fn parse(descr: &str) -> Option<Self> {
        let (order, code) = descr.split_at(1);
        if !matches!(order, "<" | "|" | "=") {
            return None;
        }
        Some(match code {
            "u1" => Dtype::U8,
            "i1" => Dtype::I8,
            "u2" => Dtype::U16,
            "i2" => Dtype::I16,
            "u4" => Dtype::U32,
            "i4" => Dtype::I32,
            "u8" => Dtype::U64,
            "i8" => Dtype::I64,
            "f4" => Dtype::F32,
            "f8" => Dtype::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 | Dtype::I8 => 1,
            Dtype::U16 | Dtype::I16 => 2,
            Dtype::U32 | Dtype::I32 | Dtype::F32 => 4,
            Dtype::U64 | Dtype::I64 | Dtype::F64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, Dtype::F32 | Dtype::F64)
    }

    /// Decodes one little-endian integer element.
    pub fn read_int(self, b: &[u8]) -> i64 {
        match self {
            Dtype::U8 => b[0] as i64,
            Dtype::I8 => b[0] as i8 as i64,
            Dtype::U16 => u16::from_le_bytes([b[0], b[1]]) as i64,
            Dtype::I16 => i16::from_le_bytes([b[0], b[1]]) as i64,
            Dtype::U32 => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as i64,
            Dtype::I32 => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as i64,
            Dtype::U64 => u64::from_le_bytes(b[..8].try_into().expect("8 bytes")) as i64,
            Dtype::I64 => i64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
            Dtype::F32 | Dtype::F64 => panic!("read_int on a float dtype"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NpyHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl NpyHeader {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Value text following `'key':` in a header dict.
fn dict_value<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}'");
    let start = dict.find(&pat)? + pat.len();
    let rest = dict[start..].trim_start().strip_prefix(':')?.trim_start();
    Some(rest)
}

fn parse_dict(text: &str) -> io::Result<NpyHeader> {
    let descr = dict_value(text, "descr").ok_or_else(|| bad("npy header lacks descr"))?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| bad("npy descr is not a string"))?;
    let dtype = Dtype::parse(descr).ok_or_else(|| bad(format!("unsupported npy dtype {descr}")))?;

    let fortran = dict_value(text, "fortran_order").ok_or_else(|| bad("npy header lacks fortran_order"))?;
    if fortran.starts_with("True") {
        return Err(bad("fortran-ordered arrays are not supported"));
    }
    let shape = dict_value(text, "shape").ok_or_else(|| bad("npy header lacks shape"))?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("npy shape is not a tuple"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse::<usize>().map_err(|_| bad(format!("bad npy dimension {s}"))))
        .collect::<io::Result<Vec<_>>>()?;
    Ok(NpyHeader { dtype, shape })
}

/// Consumes the header, leaving `reader` at the first data byte.
pub(crate) fn read_header<R: Read>(reader: &mut R) -> io::Result<NpyHeader> {
    let mut pre = [0u8; 8];
    reader.read_exact(&mut pre)?;
    if &pre[..6] != b"\x93NUMPY" {
        return Err(bad("missing NPY magic"));
    }
    let header_len = match pre[6] {
        1 => {
            let mut b = [0u8; 2];
            reader.read_exact(&mut b)?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            reader.read_exact(&mut b)?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(bad(format!("unsupported NPY version {v}"))),
    };
    let mut text = vec![0u8; header_len];
    reader.read_exact(&mut text)?;
    parse_dict(&String::from_utf8_lossy(&text))
}

/// Encodes an NPY v1.0 file. Used for fixtures and exports.
#[cfg(test)]
pub(crate) fn encode(descr: &str, shape: &[usize], data: &[u8]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_text = if dims.len() == 1 { format!("({},)", dims[0]) } else { format!("({})", dims.join(", ")) };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_text}, }}");
    let total = 10 + dict.len() + 1;
    dict.push_str(&" ".repeat((64 - total % 64) % 64));
    dict.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend_from_slice(data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let bytes = encode("<i8", &[3, 6], &[0; 144]);
        assert_eq!((bytes.len() - 144) % 64, 0);
        let mut r = &bytes[..];
        let h = read_header(&mut r).unwrap();
        assert_eq!(h, NpyHeader { dtype: Dtype::I64, shape: vec![3, 6] });
        assert_eq!(r.len(), 144);
        let h = parse_dict("{'descr': '|u1', 'fortran_order': False, 'shape': (5,), }").unwrap();
        assert_eq!(h.shape, vec![5]);
        assert_eq!(h.dtype, Dtype::U8);
    }

    #[test]
    fn rejects_unsupported_headers() {
        assert!(parse_dict("{'descr': '>i8', 'fortran_order': False, 'shape': (2,), }").is_err());
        assert!(parse_dict("{'descr': '<i8', 'fortran_order': True, 'shape': (2,), }").is_err());
        assert!(parse_dict("{'descr': '<c16', 'fortran_order': False, 'shape': (2,), }").is_err());
        assert!(read_header(&mut &b"NOTNUMPY...."[..]).is_err());
    }

    #[test]
    fn integer_decoding() {
        assert_eq!(Dtype::I16.read_int(&(-3i16).to_le_bytes()), -3);
        assert_eq!(Dtype::U32.read_int(&7u32.to_le_bytes()), 7);
        assert_eq!(Dtype::I64.read_int(&(1i64 << 40).to_le_bytes()), 1 << 40);
    }
}
