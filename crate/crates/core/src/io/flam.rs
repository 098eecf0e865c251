//! `FLAM v1` model files.
//!
//! Layout: magic `FLAM`, u32 version, u32 layer count, then per layer:
//! u32 in_dim, u32 out_dim, u8 activation code, u8 context length, i8
//! offsets, then row-major little-endian f64 weights followed by f64 biases.
//! Trailing length-prefixed UTF-8 `model_id` and `parent_id` (empty = none).
//!
//! Extractors reuse the format with one extra layer row carrying activation
//! code 3 (statistics pooling marker). The marker row has no weight/bias
//! payload; its two context slots store the embedding-layer index and the
//! acoustic-model hidden layer `h` the extractor was trained for.

use std::path::Path;

use super::{Reader, Writer};
use crate::attack::a2::ExtractorParams;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, LayerSpec, ModelParams};

const MAGIC: &[u8; 4] = b"FLAM";
const VERSION: u32 = 1;
const POOLING_CODE: u8 = 3;

fn write_layer(w: &mut Writer, layer: &Layer) {
    w.u32(layer.spec.input_dim as u32);
    w.u32(layer.spec.output_dim as u32);
    w.u8(layer.spec.activation.code());
    w.u8(layer.spec.context.len() as u8);
    for &o in &layer.spec.context {
        w.i8(o as i8);
    }
    w.f64_slice(&layer.weights);
    w.f64_slice(&layer.bias);
}

enum Row {
    Dense(Layer),
    PoolingMarker { embedding_layer: usize, h: usize },
}

fn read_row(r: &mut Reader) -> Result<Row> {
    let input_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let code = r.u8()?;
    let ctx_len = r.u8()? as usize;
    let mut context = Vec::with_capacity(ctx_len);
    for _ in 0..ctx_len {
        context.push(r.i8()? as i32);
    }
    if code == POOLING_CODE {
        if context.len() != 2 {
            return Err(Error::format(
                r.path(),
                "pooling marker must carry [embedding_layer, h]",
            ));
        }
        let _ = (input_dim, output_dim);
        return Ok(Row::PoolingMarker {
            embedding_layer: context[0] as usize,
            h: context[1] as usize,
        });
    }
    let activation = Activation::from_code(code)
        .ok_or_else(|| Error::format(r.path(), format!("unknown activation code {code}")))?;
    let weights = r.f64_vec(input_dim * output_dim)?;
    let bias = r.f64_vec(output_dim)?;
    Ok(Row::Dense(Layer {
        spec: LayerSpec::new(input_dim, output_dim, activation, context),
        weights,
        bias,
    }))
}

pub fn save_model(path: &Path, model: &ModelParams) -> Result<()> {
    let mut w = Writer::new(MAGIC);
    w.u32(VERSION);
    w.u32(model.layers.len() as u32);
    for layer in &model.layers {
        write_layer(&mut w, layer);
    }
    w.string(&model.model_id);
    w.string(model.parent_id.as_deref().unwrap_or(""));
    w.save(path)
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        match read_row(&mut r)? {
            Row::Dense(layer) => layers.push(layer),
            Row::PoolingMarker { .. } => {
                return Err(Error::format(
                    path,
                    "pooling marker in a plain model file; use load_extractor",
                ))
            }
        }
    }
    let model_id = r.string()?;
    let parent = r.string()?;
    r.finish()?;
    let model = ModelParams {
        layers,
        model_id,
        parent_id: if parent.is_empty() { None } else { Some(parent) },
    };
    model.validate()?;
    Ok(model)
}

pub fn save_extractor(path: &Path, params: &ExtractorParams) -> Result<()> {
    let mut w = Writer::new(MAGIC);
    w.u32(VERSION);
    w.u32((params.frame_layers.len() + 1 + params.segment_layers.len()) as u32);
    for layer in &params.frame_layers {
        write_layer(&mut w, layer);
    }
    // pooling marker row
    let width = params
        .frame_layers
        .last()
        .map_or(0, |l| l.spec.output_dim);
    w.u32(width as u32);
    w.u32(2 * width as u32);
    w.u8(POOLING_CODE);
    w.u8(2);
    w.i8(params.embedding_layer as i8);
    w.i8(params.h as i8);
    for layer in &params.segment_layers {
        write_layer(&mut w, layer);
    }
    w.string(&format!("a2-extractor-h{}", params.h));
    w.string("");
    w.save(path)
}

pub fn load_extractor(path: &Path) -> Result<ExtractorParams> {
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n_rows = r.u32()? as usize;
    let mut frame_layers = Vec::new();
    let mut segment_layers = Vec::new();
    let mut marker: Option<(usize, usize)> = None;
    for _ in 0..n_rows {
        match read_row(&mut r)? {
            Row::Dense(layer) => {
                if marker.is_none() {
                    frame_layers.push(layer);
                } else {
                    segment_layers.push(layer);
                }
            }
            Row::PoolingMarker { embedding_layer, h } => {
                if marker.is_some() {
                    return Err(Error::format(path, "duplicate pooling marker"));
                }
                marker = Some((embedding_layer, h));
            }
        }
    }
    let _ = r.string()?;
    let _ = r.string()?;
    r.finish()?;
    let (embedding_layer, h) =
        marker.ok_or_else(|| Error::format(path, "extractor file has no pooling marker"))?;
    let params = ExtractorParams {
        frame_layers,
        segment_layers,
        embedding_layer,
        h,
    };
    params.topology().validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::a2::ExtractorTopology;
    use crate::nn::{init_model, TrainConfig, Topology};

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let topo = Topology {
            feature_dim: 5,
            hidden_layers: 3,
            hidden_dim: 7,
            spliced_layers: 2,
            n_classes: 4,
        };
        let mut model = init_model(&topo.to_specs(), "model-x", 42).unwrap();
        model.parent_id = Some("parent-y".into());
        let path = dir.path().join("m.flam");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);

        // no parent round-trips to None
        let orphan = model.clone().with_id("z");
        let orphan = ModelParams {
            parent_id: None,
            ..orphan
        };
        save_model(&path, &orphan).unwrap();
        assert_eq!(load_model(&path).unwrap().parent_id, None);
    }

    #[test]
    fn extractor_round_trip_keeps_marker_fields() {
        let dir = tempfile::tempdir().unwrap();
        let topo = ExtractorTopology::desk(6, 10, 4, 5);
        let corpus = crate::attack::a2::TrainingCorpus {
            sequences: vec![],
            speakers: (0..5).map(|i| format!("s{i}")).collect(),
            h: 3,
            width: 6,
        };
        // build params directly through training with zero epochs
        let mut seqs = Vec::new();
        for s in 0..5 {
            seqs.push(crate::attack::a2::TrainingSequence {
                model_id: format!("m{s}"),
                utterance_id: "u".into(),
                speaker_label: s,
                deltas: crate::mat::Mat::zeros(4, 6),
            });
        }
        let corpus = crate::attack::a2::TrainingCorpus {
            sequences: seqs,
            ..corpus
        };
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 0,
            batch_size: 2,
            seed: 9,
        };
        let params = crate::attack::a2::train_extractor(&corpus, &topo, &cfg).unwrap();
        let path = dir.path().join("e.flam");
        save_extractor(&path, &params).unwrap();
        let loaded = load_extractor(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded.h, 3);
        assert_eq!(loaded.embedding_layer, 0);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flam");
        std::fs::write(&path, b"NOPE1234").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    }
}
