//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"QNT1" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: utf-8 bytes | rank: u32 | dims: u64 × rank | values: f64 × prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"QNT1";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(set: &ParamSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in set.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("missing header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut set = ParamSet::new();
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len) as usize;
        if name_len > 1 << 16 {
            return Err(Error::Format(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("non-utf8 name".into()))?;
        let rank = read_u32(&mut r).map_err(truncated_err)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible rank {rank} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(truncated_err)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(truncated)?;
            data.push(f64::from_le_bytes(buf));
        }
        set.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(set)
}

fn truncated(_: std::io::Error) -> Error {
    Error::Format("truncated record".into())
}

fn truncated_err(e: Error) -> Error {
    match e {
        Error::Io(_) => Error::Format("truncated record".into()),
        other => other,
    }
}

pub fn save_params(set: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    write_params(set, BufWriter::new(File::create(path)?))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    read_params(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes() {
        let mut buf = Vec::new();
        write_params(&ParamSet::new(), &mut buf).unwrap();
        assert_eq!(buf, b"QNT1\x01\x00\x00\x00");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_params(&b"QNT2\x01\x00\x00\x00"[..]).is_err());
        let mut set = ParamSet::new();
        set.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        write_params(&set, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(buf.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(
            entries in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..3), any::<u64>()),
                0..5,
            )
        ) {
            let mut set = ParamSet::new();
            for (k, (shape, seed)) in entries.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|i| f64::from_bits(seed.wrapping_add(i as u64) >> 2)).collect();
                set.insert(format!("p{k}"), Tensor::new(shape.clone(), data).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            write_params(&set, &mut buf).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), set.len());
            for ((n1, t1), (n2, t2)) in set.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }
}
