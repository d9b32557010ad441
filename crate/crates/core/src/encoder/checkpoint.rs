//! Versioned JSON container for a trained model.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! saved model reloads to bit-identical parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::EncoderParams;
use super::vocab::Vocabulary;
use crate::distribution::DistributionTriple;
use crate::error::{Error, Result};
use crate::labelspace::{AnnotationKind, LabelSpace};

pub const FORMAT: &str = "vad-emd-checkpoint";
pub const VERSION: u32 = 1;

/// Everything needed to run a trained encoder on raw text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub vocab: Vocabulary,
    pub space: LabelSpace,
    pub kind: AnnotationKind,
    pub params: EncoderParams,
}

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    model: &'a Model,
}

#[derive(Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    pub fn new(
        vocab: Vocabulary,
        space: LabelSpace,
        kind: AnnotationKind,
        params: EncoderParams,
    ) -> Result<Self> {
        let model = Self {
            vocab,
            space,
            kind,
            params,
        };
        model.check()?;
        Ok(model)
    }

    /// Fresh parameters sized for this vocabulary and label space.
    pub fn init(
        vocab: Vocabulary,
        space: LabelSpace,
        kind: AnnotationKind,
        embed_dim: usize,
        seed: u64,
    ) -> Self {
        let params = EncoderParams::init(vocab.len(), embed_dim, space.len(), seed);
        Self {
            vocab,
            space,
            kind,
            params,
        }
    }

    fn check(&self) -> Result<()> {
        self.params.check_shapes()?;
        if self.params.vocab_size != self.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} tokens but embeddings have {} rows",
                self.vocab.len(),
                self.params.vocab_size
            )));
        }
        if self.params.num_labels != self.space.len() {
            return Err(Error::Checkpoint(format!(
                "label space has {} labels but heads emit {}",
                self.space.len(),
                self.params.num_labels
            )));
        }
        Ok(())
    }

    pub fn forward_text(&self, text: &str) -> Result<DistributionTriple> {
        self.params.forward(&self.vocab.encode(text), self.kind)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        let env = EnvelopeRef {
            format: FORMAT,
            version: VERSION,
            model: self,
        };
        serde_json::to_writer(&mut writer, &env)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let env: Envelope = serde_json::from_reader(reader)?;
        if env.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format '{}'",
                env.format
            )));
        }
        if env.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                env.version
            )));
        }
        let mut model = env.model;
        model.space = model.space.validated()?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::VadPoint;

    fn model() -> Model {
        let vocab = Vocabulary::build(["alpha beta", "gamma"]);
        let space = LabelSpace::from_coords(
            vec!["x".into(), "y".into(), "z".into()],
            vec![
                VadPoint {
                    v: 0.2,
                    a: 0.9,
                    d: 0.1,
                },
                VadPoint {
                    v: 0.7,
                    a: 0.3,
                    d: 0.5,
                },
                VadPoint {
                    v: 0.4,
                    a: 0.5,
                    d: 0.9,
                },
            ],
        )
        .unwrap();
        let mut m = Model::init(vocab, space, AnnotationKind::Multi, 5, 77);
        m.params.attach_reg_head(1);
        m.params.embeddings[3] = -0.0;
        m.params.embeddings[4] = 1.0 / 3.0;
        m
    }

    #[test]
    fn round_trips_bitwise() {
        let m = model();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let back = Model::read(buf.as_slice()).unwrap();
        let bits = |m: &Model| -> Vec<u64> {
            m.params
                .tensors()
                .iter()
                .flat_map(|t| t.iter().map(|x| x.to_bits()))
                .collect()
        };
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back, m);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_foreign_or_inconsistent_files() {
        assert!(Model::read(r#"{"format":"other","version":1}"#.as_bytes()).is_err());
        let mut m = model();
        m.params.vocab_size += 1;
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert!(matches!(
            Model::read(buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
