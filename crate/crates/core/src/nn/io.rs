//! The "LDNN" model container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "LDNN", u32 version = 1
//! u32 input c, h, w; u32 layer count
//! per layer: u8 kind, then
//!   conv: u32 filters, u32 kernel    relu: -
//!   maxpool: u32 factor              fc: u32 units
//!   dropout: f32 rate                shortcut begin: u32 id
//!   shortcut end: u32 id, u8 broadcast
//! u64 init seed, u64 train step, u32 block count
//! per block: u32 n, n f32 weights, u32 m, m f32 biases
//! ```

use std::path::Path;

use super::model::{LayerParams, LayerSpec, ModelSpec, ModelState, Network, NnError};

const MAGIC: &[u8; 4] = b"LDNN";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vs: &[f32]) {
    put_u32(buf, vs.len() as u32);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(spec: &ModelSpec, state: &ModelState) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let (c, h, w) = spec.input;
    for d in [c, h, w, spec.layers.len()] {
        put_u32(&mut buf, d as u32);
    }
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Conv { filters, kernel } => {
                buf.push(0);
                put_u32(&mut buf, filters as u32);
                put_u32(&mut buf, kernel as u32);
            }
            LayerSpec::Relu => buf.push(1),
            LayerSpec::MaxPool { factor } => {
                buf.push(2);
                put_u32(&mut buf, factor as u32);
            }
            LayerSpec::Fc { units } => {
                buf.push(3);
                put_u32(&mut buf, units as u32);
            }
            LayerSpec::Dropout { rate } => {
                buf.push(4);
                buf.extend_from_slice(&rate.to_le_bytes());
            }
            LayerSpec::ShortcutBegin { id } => {
                buf.push(5);
                put_u32(&mut buf, id);
            }
            LayerSpec::ShortcutEnd { id, broadcast } => {
                buf.push(6);
                put_u32(&mut buf, id);
                buf.push(broadcast as u8);
            }
        }
    }
    buf.extend_from_slice(&state.seed.to_le_bytes());
    buf.extend_from_slice(&state.train_step.to_le_bytes());
    put_u32(&mut buf, state.params.len() as u32);
    for p in &state.params {
        put_f32s(&mut buf, &p.weights);
        put_f32s(&mut buf, &p.bias);
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::CorruptFile(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, NnError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32s(&mut self) -> Result<Vec<f32>, NnError> {
        let n = self.u32()? as usize;
        if n > (self.buf.len() - self.pos) / 4 {
            return Err(NnError::CorruptFile(format!("block of {n} values overruns file")));
        }
        (0..n).map(|_| self.f32()).collect()
    }
}

/// Decodes a container; the layer list must validate and the weights must fit it.
pub fn decode_model(buf: &[u8]) -> Result<(ModelSpec, ModelState), NnError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::CorruptFile("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::CorruptFile(format!("unsupported version {version}")));
    }
    let input = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n_layers = r.u32()? as usize;
    if n_layers > buf.len() {
        return Err(NnError::CorruptFile(format!("{n_layers} layers overrun file")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer = match r.u8()? {
            0 => LayerSpec::Conv {
                filters: r.u32()? as usize,
                kernel: r.u32()? as usize,
            },
            1 => LayerSpec::Relu,
            2 => LayerSpec::MaxPool {
                factor: r.u32()? as usize,
            },
            3 => LayerSpec::Fc { units: r.u32()? as usize },
            4 => LayerSpec::Dropout { rate: r.f32()? },
            5 => LayerSpec::ShortcutBegin { id: r.u32()? },
            6 => LayerSpec::ShortcutEnd {
                id: r.u32()?,
                broadcast: match r.u8()? {
                    0 => false,
                    1 => true,
                    v => return Err(NnError::CorruptFile(format!("broadcast flag {v}"))),
                },
            },
            k => return Err(NnError::CorruptFile(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    let spec = ModelSpec { input, layers };
    let seed = r.u64()?;
    let train_step = r.u64()?;
    let n_blocks = r.u32()? as usize;
    if n_blocks > buf.len() {
        return Err(NnError::CorruptFile(format!("{n_blocks} blocks overrun file")));
    }
    let mut params = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let weights = r.f32s()?;
        let bias = r.f32s()?;
        params.push(LayerParams { weights, bias });
    }
    if r.pos != buf.len() {
        return Err(NnError::CorruptFile(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let net = Network::new(spec.clone()).map_err(|e| NnError::CorruptFile(format!("stored spec: {e}")))?;
    let state = ModelState {
        params,
        seed,
        train_step,
    };
    net.check_state(&state)
        .map_err(|e| NnError::CorruptFile(format!("stored weights: {e}")))?;
    Ok((spec, state))
}

pub fn save_model(spec: &ModelSpec, state: &ModelState, path: impl AsRef<Path>) -> Result<(), NnError> {
    std::fs::write(path.as_ref(), encode_model(spec, state))
        .map_err(|e| NnError::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelSpec, ModelState), NnError> {
    let buf = std::fs::read(path.as_ref()).map_err(|e| NnError::Io(format!("{}: {e}", path.as_ref().display())))?;
    decode_model(&buf)
}

/// Loads a model and insists that it was built for `expected`.
pub fn load_model_expect(path: impl AsRef<Path>, expected: &ModelSpec) -> Result<ModelState, NnError> {
    let (spec, state) = load_model(path)?;
    if &spec != expected {
        return Err(NnError::SpecMismatch(format!(
            "file holds {} layers on input {:?}, expected {} layers on input {:?}",
            spec.layers.len(),
            spec.input,
            expected.layers.len(),
            expected.input
        )));
    }
    Ok(state)
}
