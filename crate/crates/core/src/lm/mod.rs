//! Toy decoder-only language model.

mod decoder;
mod lora;
mod vocab;

pub use decoder::{
    autoregressive_loss, decoder_forward, embed_text, generate_greedy, init_decoder, splice_input, DecoderConfig,
    LM_PREFIX,
};
pub use lora::{lora_merge, lora_names, lora_wrap, LoRAConfig, LORA_PREFIX};
pub use vocab::{TokenId, Vocab, BOS, EOS, PAD, UNK};
