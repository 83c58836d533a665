//! Binary tensor fixtures.
//!
//! Layout: 4 magic bytes (`RDT4` for 32-bit data, `RDT8` for 64-bit), the
//! rank as a little-endian `u64`, each extent as a little-endian `u64`, then
//! the elements as little-endian IEEE-754 floats in row-major order.

use std::io::{Read, Write};

use super::{Element, Tensor};
use crate::error::{Error, Result};

const MAX_RANK: u64 = 8;

fn magic<T: Element>() -> [u8; 4] {
    [b'R', b'D', b'T', b'0' + T::BYTES as u8]
}

pub fn encode<T: Element>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * tensor.rank() + T::BYTES * tensor.len());
    out.extend_from_slice(&magic::<T>());
    out.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

fn bad(message: impl Into<String>) -> Error {
    Error::parse_element("tensor fixture", message)
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(4)? != magic::<T>() {
        return Err(bad("bad magic or element width"));
    }
    let read_u64 = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let rank = read_u64(take(8)?);
    if rank > MAX_RANK {
        return Err(bad(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(usize::try_from(read_u64(take(8)?)).map_err(|_| bad("extent overflow"))?);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("element count overflow"))?;
    let body = take(
        len.checked_mul(T::BYTES)
            .ok_or_else(|| bad("size overflow"))?,
    )?;
    let data = body.chunks_exact(T::BYTES).map(T::read_le).collect();
    if !cursor.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Tensor::new(shape, data)
}

pub fn write<T: Element>(tensor: &Tensor<T>, mut w: impl Write) -> Result<()> {
    w.write_all(&encode(tensor))?;
    Ok(())
}

pub fn read<T: Element>(mut r: impl Read) -> Result<Tensor<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}
