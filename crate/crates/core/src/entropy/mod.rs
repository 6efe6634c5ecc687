//! Lossless coding of the rounded latents and the bitstream container.

pub mod bitstream;
pub mod range;
pub mod table;

pub use bitstream::{compress, decode_image, decompress, encode_image, Bitstream, EncodeOptions, Header};
pub use range::{decode_symbols, encode_symbols, RangeDecoder, RangeEncoder, SymbolDecoder, SymbolEncoder};
pub use table::FrequencyTable;
