//! WAV decoding and the KTF1 binary tensor format.

mod ktf;
mod wav;

pub use ktf::{decode_tensor, encode_tensor, read_tensor, read_tensor_as, write_tensor, AnyTensor, KTF_MAGIC};
pub use wav::{parse_wav, read_wav, AudioBuffer};
