//! On-disk framing. A store file is a 16-byte header followed by frames:
//!
//! ```text
//! header: "WNDSTORE" | version u16 LE | checksum id u16 LE | reserved u32 (zero)
//! frame:  payload length u32 LE | CRC-32 of payload u32 LE | payload (UTF-8 JSON)
//! ```

use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"WNDSTORE";
pub const FORMAT_VERSION: u16 = 1;
/// CRC-32/ISO-HDLC (the zlib/PNG polynomial, reflected, init and xorout all ones).
pub const CHECKSUM_CRC32: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const FRAME_HEADER_LEN: usize = 8;
/// Larger length fields are treated as damage rather than allocated.
pub const MAX_PAYLOAD_LEN: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("not a store file (bad magic)")]
    BadMagic,
    #[error("store format version {0} is not supported (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u16),
    #[error("checksum algorithm {0} is not supported")]
    UnsupportedChecksum(u16),
    #[error("corrupt frame at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

pub fn encode_header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(&MAGIC);
    h[8..10].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[10..12].copy_from_slice(&CHECKSUM_CRC32.to_le_bytes());
    h
}

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Bytes after the last intact frame that were discarded on open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornTail {
    pub offset: u64,
    pub len: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame<'a> {
    pub offset: u64,
    pub payload: &'a [u8],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scan<'a> {
    pub frames: Vec<Frame<'a>>,
    /// Length of the intact prefix (header plus whole frames).
    pub valid_len: u64,
    pub torn: Option<TornTail>,
    /// The file was empty or held only part of a header.
    pub needs_header: bool,
}

/// Split a file image into frames. Damage confined to the final frame is
/// reported as a torn tail; damage followed by more data is an error.
pub fn scan(bytes: &[u8]) -> Result<Scan<'_>, FormatError> {
    let header = encode_header();
    if bytes.len() < HEADER_LEN {
        if header.starts_with(bytes) {
            return Ok(Scan {
                frames: Vec::new(),
                valid_len: 0,
                torn: (!bytes.is_empty()).then(|| TornTail {
                    offset: 0,
                    len: bytes.len() as u64,
                    reason: "partial header".into(),
                }),
                needs_header: true,
            });
        }
        return Err(FormatError::BadMagic);
    }
    if bytes[..8] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let checksum = u16::from_le_bytes([bytes[10], bytes[11]]);
    if checksum != CHECKSUM_CRC32 {
        return Err(FormatError::UnsupportedChecksum(checksum));
    }

    let mut frames = Vec::new();
    let mut pos = HEADER_LEN;
    let torn = |pos: usize, reason: &str| TornTail {
        offset: pos as u64,
        len: (bytes.len() - pos) as u64,
        reason: reason.to_string(),
    };
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < FRAME_HEADER_LEN {
            return Ok(done(frames, pos, Some(torn(pos, "partial frame header"))));
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().expect("4 bytes"));
        let crc = u32::from_le_bytes(rest[4..8].try_into().expect("4 bytes"));
        let end = FRAME_HEADER_LEN as u64 + u64::from(len);
        if end > rest.len() as u64 {
            return Ok(done(frames, pos, Some(torn(pos, "frame extends past end of file"))));
        }
        let end = end as usize;
        let last = end == rest.len();
        let problem = if len == 0 || len > MAX_PAYLOAD_LEN {
            Some(format!("implausible payload length {len}"))
        } else if crc32fast::hash(&rest[FRAME_HEADER_LEN..end]) != crc {
            Some("checksum mismatch".to_string())
        } else {
            None
        };
        match problem {
            Some(reason) if last => return Ok(done(frames, pos, Some(torn(pos, &reason)))),
            Some(reason) => {
                return Err(FormatError::Corrupt {
                    offset: pos as u64,
                    reason,
                })
            }
            None => frames.push(Frame {
                offset: pos as u64,
                payload: &rest[FRAME_HEADER_LEN..end],
            }),
        }
        pos += end;
    }
    Ok(done(frames, pos, None))
}

fn done(frames: Vec<Frame<'_>>, valid_len: usize, torn: Option<TornTail>) -> Scan<'_> {
    Scan {
        frames,
        valid_len: valid_len as u64,
        torn,
        needs_header: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(payloads: &[&[u8]]) -> Vec<u8> {
        let mut out = encode_header().to_vec();
        for p in payloads {
            out.extend(encode_frame(p));
        }
        out
    }

    #[test]
    fn header_bytes() {
        assert_eq!(
            encode_header(),
            [b'W', b'N', b'D', b'S', b'T', b'O', b'R', b'E', 1, 0, 1, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn known_crc() {
        // standard check value for CRC-32/ISO-HDLC
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
        let f = encode_frame(b"123456789");
        assert_eq!(&f[..8], &[9, 0, 0, 0, 0x26, 0x39, 0xF4, 0xCB]);
    }

    #[test]
    fn intact_file() {
        let bytes = file(&[b"{\"a\":1}", b"{\"b\":2}"]);
        let s = scan(&bytes).unwrap();
        assert_eq!(s.frames.len(), 2);
        assert_eq!(s.frames[1].payload, b"{\"b\":2}");
        assert_eq!(s.valid_len, bytes.len() as u64);
        assert!(s.torn.is_none());
    }

    #[test]
    fn every_truncation_of_the_last_frame_is_torn() {
        let bytes = file(&[b"first", b"second-frame"]);
        let intact = HEADER_LEN + FRAME_HEADER_LEN + 5;
        for cut in intact + 1..bytes.len() {
            let s = scan(&bytes[..cut]).unwrap();
            assert_eq!(s.frames.len(), 1, "cut at {cut}");
            assert_eq!(s.valid_len, intact as u64);
            assert_eq!(s.torn.as_ref().unwrap().len, (cut - intact) as u64);
        }
    }

    #[test]
    fn flipped_bit_in_last_frame_is_torn_elsewhere_corrupt() {
        let mut bytes = file(&[b"first", b"second"]);
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert_eq!(scan(&bytes).unwrap().frames.len(), 1);

        let mut bytes = file(&[b"first", b"second"]);
        bytes[HEADER_LEN + FRAME_HEADER_LEN] ^= 1;
        assert!(matches!(scan(&bytes), Err(FormatError::Corrupt { offset: 16, .. })));
    }

    #[test]
    fn header_checks() {
        assert!(scan(b"").unwrap().needs_header);
        assert!(scan(b"WNDS").unwrap().needs_header);
        assert_eq!(scan(b"NOTASTOREFILE!!!!!"), Err(FormatError::BadMagic));
        let mut h = encode_header();
        h[8] = 9;
        assert_eq!(scan(&h), Err(FormatError::UnsupportedVersion(9)));
        let mut h = encode_header();
        h[10] = 2;
        assert_eq!(scan(&h), Err(FormatError::UnsupportedChecksum(2)));
    }
}
