//! Model file format: little-endian, magic `SSBM`, version, then one block
//! per layer (kind tag, activation flag, stride/padding, kernel shape,
//! float32 kernel data, float32 biases). Round-trips are bit-exact; unknown
//! magic or versions and truncated files are rejected without producing a
//! partial model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Layer, LayerKind, LayerParams, Model, Tensor4};
use crate::error::{format_err, Result};
use crate::scalar::{cast, to_f64, Scalar};

pub const MODEL_MAGIC: [u8; 4] = *b"SSBM";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        w.write_all(&(layer.kind as u32).to_le_bytes())?;
        w.write_all(&[u8::from(layer.relu)])?;
        w.write_all(&(layer.params.stride as u32).to_le_bytes())?;
        w.write_all(&(layer.params.padding as u32).to_le_bytes())?;
        for &dim in layer.params.kernels.shape() {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in layer.params.kernels.data() {
            w.write_all(&(to_f64(v) as f32).to_le_bytes())?;
        }
        w.write_all(&(layer.params.biases.len() as u32).to_le_bytes())?;
        for &b in &layer.params.biases {
            w.write_all(&(to_f64(b) as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let mut r = BufReader::new(File::open(path)?);

    let magic = read_bytes::<4>(&mut r)?;
    if magic != MODEL_MAGIC {
        return Err(format_err(format!(
            "bad model magic {magic:02x?}, expected {MODEL_MAGIC:02x?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(format_err(format!(
            "unsupported model version {version}, this build reads version {MODEL_VERSION}"
        )));
    }
    let n_layers = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = match read_u32(&mut r)? {
            0 => LayerKind::Conv,
            1 => LayerKind::ConvTranspose,
            other => return Err(format_err(format!("unknown layer kind tag {other}"))),
        };
        let relu = read_bytes::<1>(&mut r)?[0] != 0;
        let stride = read_u32(&mut r)? as usize;
        let padding = read_u32(&mut r)? as usize;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = read_u32(&mut r)? as usize;
        }
        let n_kernel: usize = shape.iter().product();
        let mut kernel_data = Vec::with_capacity(n_kernel);
        for _ in 0..n_kernel {
            kernel_data.push(cast::<T>(read_f32(&mut r)? as f64));
        }
        let n_bias = read_u32(&mut r)? as usize;
        let mut biases = Vec::with_capacity(n_bias);
        for _ in 0..n_bias {
            biases.push(cast::<T>(read_f32(&mut r)? as f64));
        }
        layers.push(Layer {
            kind,
            params: LayerParams::new(Tensor4::from_vec(shape, kernel_data)?, biases, stride, padding)?,
            relu,
        });
    }
    // Trailing bytes mean the file does not match its own header.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(format_err("trailing bytes after the last model layer"));
    }
    Ok(Model::new(layers))
}

fn read_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| format_err("model file truncated"))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes::<4>(r)?))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    Ok(f32::from_le_bytes(read_bytes::<4>(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample_model(seed: u64) -> Model<f32> {
        let mut r = crate::rng::substream(seed, "io-test", 0);
        let mut layers = Vec::new();
        for (kind, relu, shape) in [
            (LayerKind::Conv, true, [4usize, 2, 3, 3]),
            (LayerKind::ConvTranspose, false, [4, 2, 3, 3]),
        ] {
            let data: Vec<f32> = (0..shape.iter().product::<usize>())
                .map(|_| r.gen::<f32>() - 0.5)
                .collect();
            let n_bias = if kind == LayerKind::Conv { shape[0] } else { shape[1] };
            let biases: Vec<f32> = (0..n_bias).map(|_| r.gen::<f32>() - 0.5).collect();
            layers.push(Layer {
                kind,
                params: LayerParams::new(Tensor4::from_vec(shape, data).unwrap(), biases, 2, 1).unwrap(),
                relu,
            });
        }
        Model::new(layers)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ssbm");
        let p2 = dir.path().join("b.ssbm");
        let model = sample_model(1);
        save_model(&model, &p1).unwrap();
        let loaded: Model<f32> = load_model(&p1).unwrap();
        assert_eq!(loaded, model);
        save_model(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ssbm");
        save_model(&sample_model(2), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_model::<f32>(&path) {
            Err(crate::Error::Format(_)) => {}
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected_with_message() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ssbm");
        save_model(&sample_model(3), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_model::<f32>(&path) {
            Err(crate::Error::Format(msg)) => assert!(msg.contains("version 99"), "message: {msg}"),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ssbm");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_model::<f32>(&path), Err(crate::Error::Format(_))));
    }
}
