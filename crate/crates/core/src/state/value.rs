//! Byte encoding of an `EntityState`.
//!
//! `[schema_hash u64][dtype u8][flags u8][n_layers u16][last_event_ts i64]`
//! `[width u32; n_layers][floats]`, little-endian. `flags` bit 0 marks a
//! present timestamp. The fixed prefix lets the store read the timestamp
//! without knowing the layer widths.

use crate::model::{EntityState, Precision, Real};

use super::StoreError;

pub const FIXED_HEADER: usize = 20;

pub fn encoded_len(widths: &[usize], precision: Precision) -> usize {
    FIXED_HEADER + 4 * widths.len() + widths.iter().sum::<usize>() * precision.size()
}

pub fn encode_state<F: Real>(state: &EntityState<F>, schema_hash: u64) -> Vec<u8> {
    let widths: Vec<usize> = state.layers.iter().map(Vec::len).collect();
    let mut out = Vec::with_capacity(encoded_len(&widths, F::PRECISION));
    out.extend_from_slice(&schema_hash.to_le_bytes());
    out.push(F::PRECISION.size() as u8);
    out.push(state.last_event_ts.is_some() as u8);
    out.extend_from_slice(&(widths.len() as u16).to_le_bytes());
    out.extend_from_slice(&state.last_event_ts.unwrap_or(0).to_le_bytes());
    for w in &widths {
        out.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for layer in &state.layers {
        for v in layer {
            v.write_le(&mut out);
        }
    }
    out
}

fn invalid(msg: impl Into<String>) -> StoreError {
    StoreError::InvalidValue(msg.into())
}

/// Timestamp stored in an encoded state, after checking the fixed header.
pub fn peek_last_ts(bytes: &[u8]) -> Result<Option<i64>, StoreError> {
    if bytes.len() < FIXED_HEADER {
        return Err(invalid(format!("value of {} bytes is shorter than the header", bytes.len())));
    }
    let flags = bytes[9];
    let ts = i64::from_le_bytes(bytes[12..20].try_into().unwrap());
    Ok((flags & 1 == 1).then_some(ts))
}

/// Decodes a state and checks it against the serving model's schema hash,
/// precision and layer widths.
pub fn decode_state<F: Real>(bytes: &[u8], schema_hash: u64, widths: &[usize]) -> Result<EntityState<F>, StoreError> {
    let last_event_ts = peek_last_ts(bytes)?;
    let hash = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    if hash != schema_hash {
        return Err(StoreError::SchemaMismatch { expected: schema_hash, found: hash });
    }
    if bytes[8] as usize != F::PRECISION.size() {
        return Err(invalid(format!("stored float size {} does not match {}", bytes[8], F::PRECISION.size())));
    }
    let n = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
    if bytes.len() != encoded_len(widths, F::PRECISION) || n != widths.len() {
        return Err(invalid("layer layout does not match the model"));
    }
    let mut at = FIXED_HEADER;
    for w in widths {
        let stored = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if stored != *w {
            return Err(invalid(format!("stored layer width {stored}, model expects {w}")));
        }
        at += 4;
    }
    let size = F::PRECISION.size();
    let layers = widths
        .iter()
        .map(|w| {
            let layer = (0..*w).map(|k| F::read_le(&bytes[at + k * size..])).collect();
            at += w * size;
            layer
        })
        .collect();
    Ok(EntityState { layers, last_event_ts })
}
