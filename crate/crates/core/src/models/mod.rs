//! Multilayer-perceptron classifiers, posteriors over their parameters and model files.

mod mlp;
mod persist;
mod posterior;

pub use mlp::{Activation, LayerLayout, Mlp, ParamNodes, ParamSlice};
pub use persist::{ModelFile, FORMAT_VERSION, MAGIC};
pub use posterior::{
    ensemble_predict, predict, softmax_rows, DiagGaussian, Posterior, DEFAULT_LA_SAMPLES,
    DEFAULT_VB_SAMPLES,
};
