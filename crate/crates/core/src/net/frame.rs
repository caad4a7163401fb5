//! Wire framing: a 4-byte big-endian length followed by that many bytes of
//! canonical envelope JSON.

use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::identity::{EnvelopeError, SignedEnvelope};

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    TooLarge(usize),
    #[error("frame truncated: header says {expected} bytes, {found} present")]
    Truncated { expected: usize, found: usize },
    #[error("frame does not hold a canonical envelope: {0}")]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_frame(envelope: &SignedEnvelope) -> Result<Vec<u8>, FrameError> {
    frame_bytes(&envelope.to_wire_bytes())
}

pub fn frame_bytes(body: &[u8]) -> Result<Vec<u8>, FrameError> {
    if body.len() > MAX_FRAME {
        return Err(FrameError::TooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<SignedEnvelope, FrameError> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or(FrameError::Truncated { expected: 4, found: bytes.len() })?;
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let body = &bytes[4..];
    if body.len() != len {
        return Err(FrameError::Truncated { expected: len, found: body.len() });
    }
    Ok(SignedEnvelope::from_wire_bytes(body)?)
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, envelope: &SignedEnvelope) -> Result<(), FrameError> {
    w.write_all(&encode_frame(envelope)?).await?;
    w.flush().await?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames. An
/// oversize header is rejected before its body is read.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<SignedEnvelope>, FrameError> {
    let mut header = [0u8; 4];
    match r.read_exact(&mut header).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).await?;
    Ok(Some(SignedEnvelope::from_wire_bytes(&body)?))
}
