use super::{WireError, WireResult};

/// Little-endian field writer.
#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i32(&mut self, v: i32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn strs(&mut self, v: &[String]) -> &mut Self {
        self.u32(v.len() as u32);
        for s in v {
            self.str(s);
        }
        self
    }

    pub fn u32s(&mut self, v: &[u32]) -> &mut Self {
        self.u32(v.len() as u32);
        for x in v {
            self.u32(*x);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Little-endian field reader; every short read is a `MalformedFrame`.
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> WireResult<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::MalformedFrame(format!(
                "need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> WireResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> WireResult<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(WireError::MalformedFrame(format!("bad bool byte {b}"))),
        }
    }

    pub fn u16(&mut self) -> WireResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> WireResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> WireResult<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> WireResult<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> WireResult<String> {
        String::from_utf8(self.bytes()?).map_err(|_| WireError::MalformedFrame("string is not UTF-8".into()))
    }

    pub fn strs(&mut self) -> WireResult<Vec<String>> {
        let n = self.u32()?;
        self.bounded(n, 4)?;
        (0..n).map(|_| self.str()).collect()
    }

    pub fn u32s(&mut self) -> WireResult<Vec<u32>> {
        let n = self.u32()?;
        self.bounded(n, 4)?;
        (0..n).map(|_| self.u32()).collect()
    }

    /// Reject counts that could not possibly fit in the remaining bytes, so a
    /// corrupt count cannot trigger a huge allocation.
    pub fn bounded(&self, count: u32, min_item: usize) -> WireResult<()> {
        let remaining = self.buf.len() - self.pos;
        if (count as usize).saturating_mul(min_item) > remaining {
            return Err(WireError::MalformedFrame(format!(
                "count {count} cannot fit in {remaining} remaining bytes"
            )));
        }
        Ok(())
    }

    pub fn finish(self) -> WireResult<()> {
        if self.pos != self.buf.len() {
            return Err(WireError::MalformedFrame(format!(
                "{} unread trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
