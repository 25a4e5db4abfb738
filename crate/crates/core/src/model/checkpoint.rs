//! Text checkpoint format.
//!
//! ```text
//! dims <F> <H> <D> <C>
//! base.W <rows> <cols>
//! <row values ...>
//! ...
//! ```
//!
//! Blocks: `base.W`, `base.b`, `trunk.W`, `trunk.b`, then `cls.W`, `cls.b`
//! when `C > 0` and `siam.w`, `siam.b` when a Siamese head is stored.
//! Vectors are written as one-row blocks. Values use shortest round-trip
//! formatting, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{ClassifierHead, Dense, EmbeddingModel, SiameseHead};
use crate::error::{Error, Result};
use crate::textio;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub classifier: Option<ClassifierHead>,
    pub siamese: Option<SiameseHead>,
}

const BLOCK_ORDER: [&str; 8] = [
    "base.W", "base.b", "trunk.W", "trunk.b", "cls.W", "cls.b", "siam.w", "siam.b",
];

fn push_block(out: &mut String, name: &str, rows: usize, cols: usize, values: &[f64]) {
    writeln!(out, "{name} {rows} {cols}").unwrap();
    for r in 0..rows {
        textio::push_floats(out, &values[r * cols..(r + 1) * cols], ' ');
        out.push('\n');
    }
}

impl Checkpoint {
    pub fn new(model: EmbeddingModel) -> Self {
        Checkpoint {
            model,
            classifier: None,
            siamese: None,
        }
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let (f, h, d) = (m.feature_dim(), m.hidden_dim(), m.embedding_dim());
        let c = self.classifier.as_ref().map_or(0, ClassifierHead::classes);
        let mut out = format!("dims {f} {h} {d} {c}\n");
        push_block(&mut out, "base.W", h, f, &m.base.w);
        push_block(&mut out, "base.b", 1, h, &m.base.b);
        push_block(&mut out, "trunk.W", d, h, &m.trunk.w);
        push_block(&mut out, "trunk.b", 1, d, &m.trunk.b);
        if let Some(cls) = &self.classifier {
            push_block(&mut out, "cls.W", c, d, &cls.layer.w);
            push_block(&mut out, "cls.b", 1, c, &cls.layer.b);
        }
        if let Some(s) = &self.siamese {
            push_block(&mut out, "siam.w", 1, d, &s.w);
            push_block(&mut out, "siam.b", 1, 1, &[s.b]);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty checkpoint"))?;
        let dims: Vec<usize> = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["dims", rest @ ..] if rest.len() == 4 => rest
                .iter()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::parse(1, format!("bad dimension `{t}`")))
                })
                .collect::<Result<_>>()?,
            _ => return Err(Error::parse(1, "expected `dims F H D C`")),
        };
        let (f, h, d, c) = (dims[0], dims[1], dims[2], dims[3]);
        if f == 0 || h == 0 || d == 0 || c == 1 {
            return Err(Error::parse(
                1,
                "dimensions must be positive and C must be 0 or >= 2",
            ));
        }
        let limit = 1usize << 24;
        for v in [f, h, d, c] {
            if v > limit {
                return Err(Error::parse(1, "dimension too large"));
            }
        }

        let mut blocks: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        while let Some((lineno, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let [name, rows, cols] = toks.as_slice() else {
                return Err(Error::parse(lineno, "expected `<block> <rows> <cols>`"));
            };
            let name = BLOCK_ORDER
                .iter()
                .copied()
                .find(|b| b == name)
                .ok_or_else(|| Error::parse(lineno, format!("unknown block `{name}`")))?;
            let (rows, cols): (usize, usize) = match (rows.parse(), cols.parse()) {
                (Ok(r), Ok(c)) => (r, c),
                _ => return Err(Error::parse(lineno, "bad block shape")),
            };
            let expected = expected_shape(name, f, h, d, c);
            if (rows, cols) != expected {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "block `{name}` has shape {rows}x{cols}, expected {}x{}",
                        expected.0, expected.1
                    ),
                ));
            }
            if blocks.contains_key(name) {
                return Err(Error::parse(lineno, format!("duplicate block `{name}`")));
            }
            let mut values = Vec::new();
            for _ in 0..rows {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| Error::parse(lineno, format!("block `{name}` truncated")))?;
                let vals = textio::parse_floats(row.split_whitespace(), ln)?;
                if vals.len() != cols {
                    return Err(Error::parse(
                        ln,
                        format!("expected {cols} values, found {}", vals.len()),
                    ));
                }
                values.extend(vals);
            }
            blocks.insert(name, values);
        }

        let mut take = |name: &str| {
            blocks
                .remove(name)
                .ok_or_else(|| Error::parse(0, format!("missing block `{name}`")))
        };
        let model = EmbeddingModel {
            base: Dense {
                inputs: f,
                outputs: h,
                w: take("base.W")?,
                b: take("base.b")?,
            },
            trunk: Dense {
                inputs: h,
                outputs: d,
                w: take("trunk.W")?,
                b: take("trunk.b")?,
            },
        };
        let classifier = if c > 0 {
            Some(ClassifierHead {
                layer: Dense {
                    inputs: d,
                    outputs: c,
                    w: take("cls.W")?,
                    b: take("cls.b")?,
                },
            })
        } else {
            None
        };
        let siamese = match (blocks.remove("siam.w"), blocks.remove("siam.b")) {
            (Some(w), Some(b)) => Some(SiameseHead { w, b: b[0] }),
            (None, None) => None,
            _ => {
                return Err(Error::parse(
                    0,
                    "Siamese head needs both `siam.w` and `siam.b`",
                ))
            }
        };
        if let Some(name) = blocks.keys().next() {
            return Err(Error::parse(
                0,
                format!("block `{name}` not allowed when C = 0"),
            ));
        }
        Ok(Checkpoint {
            model,
            classifier,
            siamese,
        })
    }
}

fn expected_shape(name: &str, f: usize, h: usize, d: usize, c: usize) -> (usize, usize) {
    match name {
        "base.W" => (h, f),
        "base.b" => (1, h),
        "trunk.W" => (d, h),
        "trunk.b" => (1, d),
        "cls.W" => (c, d),
        "cls.b" => (1, c),
        "siam.w" => (1, d),
        "siam.b" => (1, 1),
        _ => unreachable!(),
    }
}
