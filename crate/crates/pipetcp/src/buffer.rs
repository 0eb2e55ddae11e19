//! Circular payload buffers and the handle registry the payload-transfer
//! stage resolves buffer base handles through.

use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

/// Power-of-two circular byte buffer. Positions are free-running offsets;
/// the ring index is the offset masked by `size - 1`.
pub struct PayloadBuffer {
    data: Mutex<Box<[u8]>>,
    mask: u32,
}

impl PayloadBuffer {
    pub fn new(size: u32) -> Self {
        assert!(size.is_power_of_two(), "buffer sizes are powers of two");
        PayloadBuffer {
            data: Mutex::new(vec![0u8; size as usize].into_boxed_slice()),
            mask: size - 1,
        }
    }

    pub fn size(&self) -> u32 {
        self.mask + 1
    }

    /// Copy `src` into the ring at free-running offset `pos`, wrapping.
    pub fn write_at(&self, pos: u32, src: &[u8]) {
        assert!(src.len() as u32 <= self.size());
        let mut data = self.data.lock();
        let start = (pos & self.mask) as usize;
        let first = src.len().min(data.len() - start);
        data[start..start + first].copy_from_slice(&src[..first]);
        let rest = src.len() - first;
        data[..rest].copy_from_slice(&src[first..]);
    }

    /// Copy `len` bytes out of the ring starting at free-running offset `pos`.
    pub fn read_at(&self, pos: u32, len: u32) -> Vec<u8> {
        assert!(len <= self.size());
        let data = self.data.lock();
        let start = (pos & self.mask) as usize;
        let len = len as usize;
        let first = len.min(data.len() - start);
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(&data[start..start + first]);
        out.extend_from_slice(&data[..len - first]);
        out
    }
}

/// Maps 64-bit buffer base handles to buffers; the handle is what the post
/// partition stores in `rx_base`/`tx_base`.
#[derive(Default)]
pub struct BufferRegistry {
    bufs: RwLock<Vec<Option<Arc<PayloadBuffer>>>>,
}

impl BufferRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, buf: Arc<PayloadBuffer>) -> u64 {
        let mut bufs = self.bufs.write();
        if let Some(i) = bufs.iter().position(|b| b.is_none()) {
            bufs[i] = Some(buf);
            i as u64
        } else {
            bufs.push(Some(buf));
            (bufs.len() - 1) as u64
        }
    }

    pub fn get(&self, handle: u64) -> Option<Arc<PayloadBuffer>> {
        self.bufs.read().get(handle as usize)?.clone()
    }

    pub fn release(&self, handle: u64) {
        if let Some(slot) = self.bufs.write().get_mut(handle as usize) {
            *slot = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapping_write_read() {
        let buf = PayloadBuffer::new(128);
        // 100 bytes written 40 short of the boundary: 40 at tail, 60 at head.
        let pos = 128 - 40;
        let src: Vec<u8> = (0..100u8).collect();
        buf.write_at(pos, &src);
        assert_eq!(buf.read_at(pos, 100), src);
        // Free-running offsets far past the size wrap identically.
        buf.write_at(pos + 128 * 3, &src);
        assert_eq!(buf.read_at(pos, 100), src);
    }

    #[test]
    fn registry_reuses_slots() {
        let reg = BufferRegistry::new();
        let a = reg.register(Arc::new(PayloadBuffer::new(64)));
        let b = reg.register(Arc::new(PayloadBuffer::new(64)));
        assert_ne!(a, b);
        reg.release(a);
        let c = reg.register(Arc::new(PayloadBuffer::new(64)));
        assert_eq!(a, c);
        assert!(reg.get(b).is_some());
    }
}
