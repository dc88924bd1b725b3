//! Neural fields: signed distance, view-dependent reflectance and background
//! transient networks over positionally encoded inputs.

mod encoding;
mod mlp;
mod networks;

pub use encoding::{encode_into, encoded_width, positional_encode};
pub use mlp::{BoundMlp, LayerInit, Mlp};
pub use networks::{
    geometric_init, sdf_grad, sdf_grads, AlphaParam, BackgroundNetwork, BoundScene, FieldError, InitReport,
    NeuralScene, NeuralSdf, Normalizer, ReflectanceNetwork, SdfField, SdfNetwork,
};
