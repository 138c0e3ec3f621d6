use super::{Activation, Architecture, Mlp, OutputActivation};
use crate::error::{Error, Result};

/// Encoder/decoder view of a network: the first `encoder_layers` weight
/// layers form the encoder `f_ω`, the remaining `decoder_layers` the decoder
/// `g_θ`. Because the flat parameter layout is layer-major, `ω` is exactly a
/// prefix of the parameter vector and `θ` the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDecoderSplit {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
}

impl EncoderDecoderSplit {
    pub fn new(arch: &Architecture, encoder_layers: usize) -> Result<EncoderDecoderSplit> {
        let depth = arch.depth();
        if encoder_layers == 0 || encoder_layers >= depth {
            return Err(Error::contract(format!(
                "encoder layers must be in [1, {}), got {encoder_layers}",
                depth
            )));
        }
        if let Activation::LeakyRelu(_) = arch.activation {
            return Err(Error::Unsupported(
                "encoder output activation must be tanh or identity".into(),
            ));
        }
        Ok(EncoderDecoderSplit {
            encoder_layers,
            decoder_layers: depth - encoder_layers,
        })
    }

    pub fn encoder_arch(&self, arch: &Architecture) -> Architecture {
        let output_activation = match arch.activation {
            Activation::Identity => OutputActivation::Identity,
            _ => OutputActivation::Tanh,
        };
        Architecture {
            input_dim: arch.input_dim,
            hidden_widths: arch.hidden_widths[..self.encoder_layers - 1].to_vec(),
            output_dim: arch.hidden_widths[self.encoder_layers - 1],
            activation: arch.activation,
            output_activation,
        }
    }

    pub fn decoder_arch(&self, arch: &Architecture) -> Architecture {
        Architecture {
            input_dim: arch.hidden_widths[self.encoder_layers - 1],
            hidden_widths: arch.hidden_widths[self.encoder_layers..].to_vec(),
            output_dim: arch.output_dim,
            activation: arch.activation,
            output_activation: arch.output_activation,
        }
    }

    /// Length of the `ω` prefix in the combined parameter vector.
    pub fn partition_point(&self, arch: &Architecture) -> usize {
        self.encoder_arch(arch).param_count()
    }

    pub fn split(&self, net: &Mlp) -> Result<(Mlp, Mlp)> {
        self.check_depth(net.arch())?;
        let p = self.partition_point(net.arch());
        let enc = Mlp::from_params(self.encoder_arch(net.arch()), net.params()[..p].to_vec())?;
        let dec = Mlp::from_params(self.decoder_arch(net.arch()), net.params()[p..].to_vec())?;
        Ok((enc, dec))
    }

    pub fn join(&self, arch: &Architecture, encoder: &Mlp, decoder: &Mlp) -> Result<Mlp> {
        self.check_depth(arch)?;
        if encoder.arch() != &self.encoder_arch(arch) || decoder.arch() != &self.decoder_arch(arch) {
            return Err(Error::contract("encoder/decoder do not match the combined architecture"));
        }
        let mut params = encoder.params().to_vec();
        params.extend_from_slice(decoder.params());
        Mlp::from_params(arch.clone(), params)
    }

    fn check_depth(&self, arch: &Architecture) -> Result<()> {
        if self.encoder_layers + self.decoder_layers != arch.depth() {
            return Err(Error::contract(format!(
                "split {}+{} does not match depth {}",
                self.encoder_layers,
                self.decoder_layers,
                arch.depth()
            )));
        }
        Ok(())
    }
}
