//! Little-endian helpers shared by the versioned model files.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{CoreError, Result};

pub fn write_header(w: &mut impl Write, magic: &[u8; 4], version: u16) -> Result<()> {
    w.write_all(magic)?;
    w.write_u16::<LittleEndian>(version)?;
    Ok(())
}

pub fn read_header(r: &mut impl Read, magic: &[u8; 4], version: u16) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(CoreError::Data(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let v = r.read_u16::<LittleEndian>()?;
    if v != version {
        return Err(CoreError::Data(format!("unsupported file version {v}")));
    }
    Ok(())
}

pub fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    w.write_u64::<LittleEndian>(xs.len() as u64)?;
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n > 1 << 32 {
        return Err(CoreError::Data(format!("implausible vector length {n}")));
    }
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

pub fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str(r: &mut impl Read) -> Result<String> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| CoreError::Data("string is not UTF-8".into()))
}
