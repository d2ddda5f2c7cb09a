//! Versioned binary network files: layer descriptions followed by
//! little-endian parameter blobs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layer::{Layer, LayerSpec};
use crate::network::Network;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NDNN";
const VERSION: u16 = 1;

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_u32::<LittleEndian>(t.rank() as u32)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank > 8 {
        return Err(NnError::Format(format!("tensor rank {rank} is implausible")));
    }
    let shape = (0..rank)
        .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Tensor::from_vec(&shape, data).map_err(|e| NnError::Format(e.to_string()))
}

impl Network {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.layers().len() as u32)?;
        for layer in self.layers() {
            let desc = layer.spec().to_string();
            w.write_u32::<LittleEndian>(desc.len() as u32)?;
            w.write_all(desc.as_bytes())?;
            let params = layer.params();
            w.write_u32::<LittleEndian>(params.len() as u32)?;
            for p in params {
                write_tensor(w, p)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        // Parameters are overwritten right after construction.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let desc = String::from_utf8(buf).map_err(|_| NnError::Format("layer description is not UTF-8".into()))?;
            let spec: LayerSpec = desc.parse()?;
            let mut layer = Layer::build(spec, &mut rng)?;
            let n = r.read_u32::<LittleEndian>()? as usize;
            let tensors = (0..n).map(|_| read_tensor(r)).collect::<Result<Vec<_>>>()?;
            layer.set_params(tensors)?;
            layers.push(layer);
        }
        Ok(Network::from_layers(layers))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;

    #[test]
    fn saved_network_predicts_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = [
            LayerSpec::Conv1d { kernel: 3, inputs: 2, filters: 3 },
            LayerSpec::Activation(Activation::Elu),
            LayerSpec::MaxPool1d { size: 2 },
            LayerSpec::GaussianNoise { std: 0.1 },
            LayerSpec::BiLstm { inputs: 3, hidden: 2, return_sequences: false },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { inputs: 4, units: 2 },
            LayerSpec::Activation(Activation::Sigmoid),
        ];
        let mut net = Network::build(&specs, &mut rng).unwrap();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        let mut back = Network::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.specs(), net.specs());
        let x = Tensor::from_vec(&[2, 6, 2], (0..24).map(|v| (v as f64).sin()).collect()).unwrap();
        assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::build(&[LayerSpec::Dense { inputs: 3, units: 2 }], &mut rng).unwrap();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(Network::read_from(&mut bytes.as_slice()).is_err());
        assert!(Network::read_from(&mut &b"XXXX"[..]).is_err());
    }
}
