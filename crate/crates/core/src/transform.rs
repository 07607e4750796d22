//! Control-layer input: an affine map over `[x_t; mu_s; mu_n]` applied to
//! every frame.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::codec::SectionedDoc;
use crate::error::{Error, Result};
use crate::estimators::NoiseVector;
use crate::features::FeatureMatrix;
use crate::linalg::{from_rows, to_rows};

const AFFINE_MAGIC: &str = "NVAFFINE1";

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl AffineMap {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::Dimension {
                what: "affine bias length",
                expected: weights.nrows(),
                actual: bias.len(),
            });
        }
        if weights.nrows() == 0 {
            return Err(Error::InvalidConfig("affine map has no outputs".into()));
        }
        if weights.ncols() == 0 || !weights.ncols().is_multiple_of(3) {
            return Err(Error::InvalidConfig(format!(
                "affine map needs 3d input columns, got {}",
                weights.ncols()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine map"));
        }
        Ok(Self { weights, bias })
    }

    /// Identity over `3d` inputs: output frame is `[x_t; mu_s; mu_n]`.
    pub fn identity_append(dim: usize) -> Self {
        Self {
            weights: DMatrix::identity(3 * dim, 3 * dim),
            bias: DVector::zeros(3 * dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols() / 3
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn to_text(&self) -> String {
        let mut doc = SectionedDoc::new(AFFINE_MAGIC);
        doc.push_meta("rows", self.weights.nrows());
        doc.push_meta("cols", self.weights.ncols());
        doc.push_section("weights", to_rows(&self.weights));
        doc.push_section("bias", vec![self.bias.iter().copied().collect()]);
        doc.to_text()
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let doc = SectionedDoc::parse(text, context, AFFINE_MAGIC)?;
        let rows = doc.meta_usize("rows", context)?;
        let cols = doc.meta_usize("cols", context)?;
        let weights = from_rows(doc.matrix("weights", rows, cols, context)?);
        let bias = DVector::from_column_slice(doc.vector("bias", rows, context)?);
        Self::new(weights, bias)
    }
}

pub fn read_affine(path: impl AsRef<Path>) -> Result<AffineMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AffineMap::parse(&text, &path.display().to_string())
}

pub fn write_affine(map: &AffineMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map.to_text()).map_err(|e| Error::io(path, e))
}

/// Output frame `t` is `W [x_t; mu_s; mu_n] + b`.
pub fn apply_control_layer(features: &FeatureMatrix, vector: &NoiseVector, map: &AffineMap) -> Result<FeatureMatrix> {
    let d = features.dim();
    for (what, actual) in [
        ("noise vector dimension", vector.dim()),
        ("silence mean length", vector.silence_mean.len()),
        ("affine input dimension", map.input_dim()),
    ] {
        if actual != d {
            return Err(Error::Dimension {
                what,
                expected: d,
                actual,
            });
        }
    }
    let noise = DVector::from_iterator(2 * d, vector.to_vec());
    // the noise part is the same for every frame
    let offset = map.weights.columns(d, 2 * d) * noise + &map.bias;
    let w_x = map.weights.columns(0, d);
    let out_dim = map.output_dim();
    let mut data = Vec::with_capacity(features.num_frames() * out_dim);
    for frame in features.frames() {
        let x = DVector::from_column_slice(frame);
        data.extend((w_x * x + &offset).iter());
    }
    FeatureMatrix::new(features.num_frames(), out_dim, data)
}
