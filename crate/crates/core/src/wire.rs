//! Canonical serialization: length-prefixed variable fields in declaration
//! order, integers little-endian fixed-width 64-bit. Block ids are hashes of
//! this encoding, and the simulator uses it as the wire format when
//! accounting message sizes.

use crate::crypto::Digest;

/// Append-only canonical encoder.
#[derive(Default)]
pub struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn bool(&mut self, x: bool) {
        self.buf.push(x as u8);
    }

    pub fn digest(&mut self, d: &Digest) {
        self.buf.extend_from_slice(&d.0);
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn opt<T: Wire>(&mut self, v: &Option<T>) {
        match v {
            None => self.u8(0),
            Some(x) => {
                self.u8(1);
                x.encode(self);
            }
        }
    }

    pub fn list<T: Wire>(&mut self, items: &[T]) {
        self.u64(items.len() as u64);
        for it in items {
            it.encode(self);
        }
    }

    pub fn put<T: Wire>(&mut self, v: &T) {
        v.encode(self);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Types with a canonical byte encoding.
pub trait Wire {
    fn encode(&self, e: &mut Enc);

    fn encoded(&self) -> Vec<u8> {
        let mut e = Enc::new();
        self.encode(&mut e);
        e.finish()
    }

    fn encoded_len(&self) -> usize {
        self.encoded().len()
    }
}

impl Wire for u64 {
    fn encode(&self, e: &mut Enc) {
        e.u64(*self);
    }
}

impl Wire for Digest {
    fn encode(&self, e: &mut Enc) {
        e.digest(self);
    }
}

impl Wire for Vec<u8> {
    fn encode(&self, e: &mut Enc) {
        e.bytes(self);
    }
}
