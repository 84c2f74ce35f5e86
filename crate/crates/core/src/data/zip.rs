//! Minimal ZIP reader: central directory, stored and deflated members, ZIP64 sizes.

use std::io::{self, Read, Seek, SeekFrom};

use flate2::read::DeflateDecoder;

const EOCD_SIG: u32 = 0x0605_4b50;
const EOCD64_LOCATOR_SIG: u32 = 0x0706_4b50;
const EOCD64_SIG: u32 = 0x0606_4b50;
const CENTRAL_SIG: u32 = 0x0201_4b50;
const LOCAL_SIG: u32 = 0x0403_4b50;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ZipEntry {
    pub name: String,
    pub method: u16,
    pub crc32: u32,
    pub compressed_size: u64,
    pub uncompressed_size: u64,
    pub local_header_offset: u64,
}

pub(crate) struct ZipArchive<R> {
    reader: R,
    pub entries: Vec<ZipEntry>,
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

impl<R: Read + Seek> ZipArchive<R> {
    pub fn new(mut reader: R) -> io::Result<Self> {
        let len = reader.seek(SeekFrom::End(0))?;
        let tail_len = len.min(22 + 65_535 + 20);
        reader.seek(SeekFrom::Start(len - tail_len))?;
        let mut tail = vec![0u8; tail_len as usize];
        reader.read_exact(&mut tail)?;
        let eocd = (0..tail.len().saturating_sub(21))
            .rev()
            .find(|&i| u32_at(&tail, i) == EOCD_SIG)
            .ok_or_else(|| bad("not a zip archive: end of central directory not found"))?;

        let mut count = u16_at(&tail, eocd + 10) as u64;
        let mut cd_size = u32_at(&tail, eocd + 12) as u64;
        let mut cd_offset = u32_at(&tail, eocd + 16) as u64;
        if eocd >= 20 && u32_at(&tail, eocd - 20) == EOCD64_LOCATOR_SIG {
            let at = u64_at(&tail, eocd - 20 + 8);
            reader.seek(SeekFrom::Start(at))?;
            let mut rec = [0u8; 56];
            reader.read_exact(&mut rec)?;
            if u32_at(&rec, 0) != EOCD64_SIG {
                return Err(bad("corrupt zip64 end of central directory"));
            }
            count = u64_at(&rec, 32);
            cd_size = u64_at(&rec, 40);
            cd_offset = u64_at(&rec, 48);
        }
        if cd_offset.checked_add(cd_size).is_none_or(|end| end > len) {
            return Err(bad("central directory lies outside the file"));
        }

        reader.seek(SeekFrom::Start(cd_offset))?;
        let mut cd = vec![0u8; cd_size as usize];
        reader.read_exact(&mut cd)?;
        let mut entries = Vec::with_capacity(count as usize);
        let mut at = 0usize;
        for _ in 0..count {
            if at + 46 > cd.len() || u32_at(&cd, at) != CENTRAL_SIG {
                return Err(bad(format!("corrupt central directory entry at offset {}", cd_offset + at as u64)));
            }
            let name_len = u16_at(&cd, at + 28) as usize;
            let extra_len = u16_at(&cd, at + 30) as usize;
            let comment_len = u16_at(&cd, at + 32) as usize;
            let end = at + 46 + name_len + extra_len + comment_len;
            if end > cd.len() {
                return Err(bad("central directory entry overruns directory"));
            }
            let name = String::from_utf8_lossy(&cd[at + 46..at + 46 + name_len]).into_owned();
            let mut entry = ZipEntry {
                name,
                method: u16_at(&cd, at + 10),
                crc32: u32_at(&cd, at + 16),
                compressed_size: u32_at(&cd, at + 20) as u64,
                uncompressed_size: u32_at(&cd, at + 24) as u64,
                local_header_offset: u32_at(&cd, at + 42) as u64,
            };
            apply_zip64_extra(&mut entry, &cd[at + 46 + name_len..at + 46 + name_len + extra_len]);
            entries.push(entry);
            at = end;
        }
        Ok(ZipArchive { reader, entries })
    }

    pub fn entry(&self, name: &str) -> Option<&ZipEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Streams the decompressed content of `name`, verifying its CRC at EOF.
    pub fn open(&mut self, name: &str) -> io::Result<Box<dyn Read + '_>> {
        let entry = self
            .entry(name)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no member {name}")))?;
        self.reader.seek(SeekFrom::Start(entry.local_header_offset))?;
        let mut local = [0u8; 30];
        self.reader.read_exact(&mut local)?;
        if u32_at(&local, 0) != LOCAL_SIG {
            return Err(bad(format!("corrupt local header for {name}")));
        }
        let skip = u16_at(&local, 26) as i64 + u16_at(&local, 28) as i64;
        self.reader.seek(SeekFrom::Current(skip))?;
        let raw = (&mut self.reader).take(entry.compressed_size);
        let inner: Box<dyn Read + '_> = match entry.method {
            0 => Box::new(raw),
            8 => Box::new(DeflateDecoder::new(raw)),
            m => return Err(bad(format!("{name}: unsupported compression method {m}"))),
        };
        Ok(Box::new(CrcReader {
            inner,
            hasher: crc32fast::Hasher::new(),
            expected: entry.crc32,
            remaining: entry.uncompressed_size,
        }))
    }
}

fn apply_zip64_extra(entry: &mut ZipEntry, mut extra: &[u8]) {
    while extra.len() >= 4 {
        let id = u16_at(extra, 0);
        let size = u16_at(extra, 2) as usize;
        let body = &extra[4..(4 + size).min(extra.len())];
        if id == 0x0001 {
            let mut at = 0;
            let mut next = |field: &mut u64| {
                if *field == u32::MAX as u64 && at + 8 <= body.len() {
                    *field = u64_at(body, at);
                    at += 8;
                }
            };
            next(&mut entry.uncompressed_size);
            next(&mut entry.compressed_size);
            next(&mut entry.local_header_offset);
        }
        extra = &extra[(4 + size).min(extra.len())..];
    }
}

struct CrcReader<R> {
    inner: R,
    hasher: crc32fast::Hasher,
    expected: u32,
    remaining: u64,
}

impl<R: Read> Read for CrcReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        self.remaining = self.remaining.saturating_sub(n as u64);
        if n == 0 && !buf.is_empty() {
            if self.remaining != 0 {
                return Err(bad(format!("member ends {} bytes early", self.remaining)));
            }
            if self.hasher.clone().finalize() != self.expected {
                return Err(bad("crc32 mismatch"));
            }
        }
        Ok(n)
    }
}

/// Writes a ZIP archive; members are `(name, bytes, deflate)`. Used for fixtures.
#[cfg(test)]
pub(crate) fn write_zip(members: &[(&str, &[u8], bool)]) -> Vec<u8> {
    use std::io::Write;
    let mut out = Vec::new();
    let mut central = Vec::new();
    for (name, data, deflate) in members {
        let body = if *deflate {
            let mut enc = flate2::write::DeflateEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(data).unwrap();
            enc.finish().unwrap()
        } else {
            data.to_vec()
        };
        let crc = crc32fast::hash(data);
        let method: u16 = if *deflate { 8 } else { 0 };
        let offset = out.len() as u32;
        let mut common = Vec::new();
        common.extend_from_slice(&20u16.to_le_bytes());
        common.extend_from_slice(&0u16.to_le_bytes());
        common.extend_from_slice(&method.to_le_bytes());
        common.extend_from_slice(&[0; 4]);
        common.extend_from_slice(&crc.to_le_bytes());
        common.extend_from_slice(&(body.len() as u32).to_le_bytes());
        common.extend_from_slice(&(data.len() as u32).to_le_bytes());
        common.extend_from_slice(&(name.len() as u16).to_le_bytes());
        common.extend_from_slice(&0u16.to_le_bytes());

        out.extend_from_slice(&LOCAL_SIG.to_le_bytes());
        out.extend_from_slice(&common);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&body);

        central.extend_from_slice(&CENTRAL_SIG.to_le_bytes());
        central.extend_from_slice(&20u16.to_le_bytes());
        central.extend_from_slice(&common);
        // comment length, disk number, internal and external attributes
        central.extend_from_slice(&[0; 10]);
        central.extend_from_slice(&offset.to_le_bytes());
        central.extend_from_slice(name.as_bytes());
    }
    let cd_offset = out.len() as u32;
    out.extend_from_slice(&central);
    out.extend_from_slice(&EOCD_SIG.to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&(members.len() as u16).to_le_bytes());
    out.extend_from_slice(&(members.len() as u16).to_le_bytes());
    out.extend_from_slice(&(central.len() as u32).to_le_bytes());
    out.extend_from_slice(&cd_offset.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out
}
