//! Layer tables for the encoders, the shared decoder and the pose network,
//! with the per-layer parameter audit against the published counts.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// Same-padded convolution, weight `[out, in, k, k]`.
    Conv,
    /// Transposed convolution, weight `[in, out, k, k]`.
    Deconv,
    /// Channel concatenation of `inputs` in order.
    Concat,
    /// Bilinear ×2 upsampling.
    Upsample,
}

/// One row of an architecture table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerSpec {
    pub name: &'static str,
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Names of the layers (or network inputs) this row consumes.
    pub inputs: &'static [&'static str],
    /// Whether a leaky ReLU follows the layer.
    pub activated: bool,
    /// Parameter count as printed in the published table, e.g. `"3.6K"`.
    pub published_params: &'static str,
}

impl LayerSpec {
    /// `k·k·cin·cout + cout` for (de)convolutions, 0 otherwise.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::Deconv => {
                self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels
            }
            LayerKind::Concat | LayerKind::Upsample => 0,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::Deconv)
    }

    /// Weight tensor shape.
    pub fn weight_shape(&self) -> Option<[usize; 4]> {
        let (k, i, o) = (self.kernel, self.in_channels, self.out_channels);
        match self.kind {
            LayerKind::Conv => Some([o, i, k, k]),
            LayerKind::Deconv => Some([i, o, k, k]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArchitectureTable {
    pub title: &'static str,
    pub layers: &'static [LayerSpec],
    pub published_total: &'static str,
}

impl ArchitectureTable {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }
}

const fn conv(
    name: &'static str,
    kernel: usize,
    stride: usize,
    in_channels: usize,
    out_channels: usize,
    inputs: &'static [&'static str],
    published_params: &'static str,
) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Conv,
        kernel,
        stride,
        in_channels,
        out_channels,
        inputs,
        activated: true,
        published_params,
    }
}

const fn linear(spec: LayerSpec) -> LayerSpec {
    LayerSpec { activated: false, ..spec }
}

const fn deconv(
    name: &'static str,
    in_channels: usize,
    out_channels: usize,
    inputs: &'static [&'static str],
    published_params: &'static str,
) -> LayerSpec {
    LayerSpec { kind: LayerKind::Deconv, ..conv(name, 3, 2, in_channels, out_channels, inputs, published_params) }
}

const fn concat(name: &'static str, out_channels: usize, inputs: &'static [&'static str]) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Concat,
        kernel: 0,
        stride: 1,
        in_channels: out_channels,
        out_channels,
        inputs,
        activated: false,
        published_params: "0",
    }
}

const LATENT: LayerSpec = concat("latent", 512, &["conv5b_image", "conv5b_depth"]);

pub const VGG11_ENCODER: ArchitectureTable = ArchitectureTable {
    title: "VGG11 encoder",
    layers: &[
        conv("conv1_image", 5, 2, 3, 48, &["image"], "3.6K"),
        conv("conv2_image", 3, 2, 48, 96, &["conv1_image"], "41K"),
        conv("conv3_image", 3, 1, 96, 192, &["conv2_image"], "166K"),
        conv("conv3b_image", 3, 2, 192, 192, &["conv3_image"], "331K"),
        conv("conv4_image", 3, 1, 192, 384, &["conv3b_image"], "663K"),
        conv("conv4b_image", 3, 2, 384, 384, &["conv4_image"], "1.3M"),
        conv("conv5_image", 3, 1, 384, 384, &["conv4b_image"], "1.3M"),
        conv("conv5b_image", 3, 2, 384, 384, &["conv5_image"], "1.3M"),
        conv("conv1_depth", 5, 2, 2, 16, &["depth"], "0.8K"),
        conv("conv2_depth", 3, 2, 16, 32, &["conv1_depth"], "4.6K"),
        conv("conv3_depth", 3, 1, 32, 64, &["conv2_depth"], "18K"),
        conv("conv3b_depth", 3, 2, 64, 64, &["conv3_depth"], "37K"),
        conv("conv4_depth", 3, 1, 64, 128, &["conv3b_depth"], "74K"),
        conv("conv4b_depth", 3, 2, 128, 128, &["conv4_depth"], "147K"),
        conv("conv5_depth", 3, 1, 128, 128, &["conv4b_depth"], "147K"),
        conv("conv5b_depth", 3, 2, 128, 128, &["conv5_depth"], "147K"),
        LATENT,
    ],
    published_total: "5.7M",
};

pub const VGG8_ENCODER: ArchitectureTable = ArchitectureTable {
    title: "VGG8 encoder",
    layers: &[
        conv("conv1_image", 5, 2, 3, 48, &["image"], "3.6K"),
        conv("conv2_image", 3, 2, 48, 96, &["conv1_image"], "41K"),
        conv("conv3b_image", 3, 2, 96, 192, &["conv2_image"], "166K"),
        conv("conv4b_image", 3, 2, 192, 384, &["conv3b_image"], "663K"),
        conv("conv5b_image", 3, 2, 384, 384, &["conv4b_image"], "1.3M"),
        conv("conv1_depth", 5, 2, 2, 16, &["depth"], "0.8K"),
        conv("conv2_depth", 3, 2, 16, 32, &["conv1_depth"], "4.6K"),
        conv("conv3b_depth", 3, 2, 32, 64, &["conv2_depth"], "18K"),
        conv("conv4b_depth", 3, 2, 64, 128, &["conv3b_depth"], "74K"),
        conv("conv5b_depth", 3, 2, 128, 128, &["conv4b_depth"], "147K"),
        LATENT,
    ],
    published_total: "2.4M",
};

/// Shared decoder. Skip inputs are named after the encoder layers, which
/// both encoder variants provide.
pub const DECODER: ArchitectureTable = ArchitectureTable {
    title: "Decoder",
    layers: &[
        deconv("deconv5", 512, 256, &["latent"], "1.2M"),
        concat("concat5", 768, &["deconv5", "conv4b_image", "conv4b_depth"]),
        conv("conv5", 3, 1, 768, 256, &["concat5"], "1.8M"),
        deconv("deconv4", 256, 128, &["conv5"], "295K"),
        concat("concat4", 384, &["deconv4", "conv3b_image", "conv3b_depth"]),
        conv("conv4", 3, 1, 384, 128, &["concat4"], "442M"),
        deconv("deconv3", 128, 128, &["conv4"], "147K"),
        concat("concat3", 256, &["deconv3", "conv2_image", "conv2_depth"]),
        conv("conv3", 3, 1, 256, 64, &["concat3"], "147K"),
        deconv("deconv2", 64, 64, &["conv3"], "37K"),
        concat("concat2", 128, &["deconv2", "conv1_image", "conv1_depth"]),
        linear(conv("conv2", 3, 1, 128, 1, &["concat2"], "1.2K")),
        LayerSpec {
            name: "output",
            kind: LayerKind::Upsample,
            kernel: 0,
            stride: 1,
            in_channels: 1,
            out_channels: 1,
            inputs: &["conv2"],
            activated: false,
            published_params: "0",
        },
    ],
    published_total: "4M",
};

pub const POSE_NETWORK: ArchitectureTable = ArchitectureTable {
    title: "Pose network",
    layers: &[
        conv("conv1", 7, 2, 6, 16, &["image_pair"], "4.7K"),
        conv("conv2", 5, 2, 16, 32, &["conv1"], "13K"),
        conv("conv3", 3, 2, 32, 64, &["conv2"], "18K"),
        conv("conv4", 3, 2, 64, 128, &["conv3"], "74K"),
        conv("conv5", 3, 2, 128, 256, &["conv4"], "295K"),
        conv("conv6", 3, 2, 256, 256, &["conv5"], "295K"),
        conv("conv7", 3, 2, 256, 256, &["conv6"], "295K"),
        linear(conv("output", 3, 1, 256, 6, &["conv7"], "14K")),
    ],
    published_total: "1M",
};

pub const ALL_TABLES: [&ArchitectureTable; 4] = [&VGG11_ENCODER, &VGG8_ENCODER, &DECODER, &POSE_NETWORK];

/// Published cells that contradict their own channel columns. The audit
/// reports them; the computed counts are what the networks use.
pub const KNOWN_ANOMALIES: [(&str, &str); 3] =
    [("Decoder", "conv4"), ("Pose network", "conv6"), ("Pose network", "conv7")];

/// Parses a published count such as `"3.6K"`, `"41K"`, `"1.3M"` or `"0"`
/// into its value and the size of one unit in its last printed digit.
pub fn parse_published(text: &str) -> Option<(f64, f64)> {
    let text = text.trim();
    let (digits, scale) = match text.chars().last()? {
        'K' => (&text[..text.len() - 1], 1e3),
        'M' => (&text[..text.len() - 1], 1e6),
        _ => (text, 1.0),
    };
    let value: f64 = digits.parse().ok()?;
    let decimals = digits.split_once('.').map_or(0, |(_, frac)| frac.len());
    Some((value * scale, scale / 10f64.powi(decimals as i32)))
}

/// Whether `count` agrees with a published value to within one unit of
/// its last printed digit. The tables mix rounding and truncation, so a
/// strict rounding rule would reject correct rows.
pub fn matches_published(count: usize, published: &str) -> bool {
    parse_published(published).is_some_and(|(value, unit)| (count as f64 - value).abs() < unit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAudit {
    pub layer: &'static str,
    pub computed: usize,
    pub published: &'static str,
    pub matches: bool,
    /// Mismatch listed in [`KNOWN_ANOMALIES`].
    pub known_anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableAudit {
    pub table: &'static str,
    pub layers: Vec<LayerAudit>,
    pub computed_total: usize,
    pub published_total: &'static str,
    pub total_matches: bool,
}

impl TableAudit {
    pub fn mismatches(&self) -> impl Iterator<Item = &LayerAudit> {
        self.layers.iter().filter(|l| !l.matches)
    }
}

pub fn audit_table(table: &ArchitectureTable) -> TableAudit {
    let layers = table
        .layers
        .iter()
        .map(|l| {
            let computed = l.param_count();
            let matches = matches_published(computed, l.published_params);
            LayerAudit {
                layer: l.name,
                computed,
                published: l.published_params,
                matches,
                known_anomaly: !matches && KNOWN_ANOMALIES.contains(&(table.title, l.name)),
            }
        })
        .collect();
    let computed_total = table.param_count();
    TableAudit {
        table: table.title,
        layers,
        computed_total,
        published_total: table.published_total,
        total_matches: matches_published(computed_total, table.published_total),
    }
}

/// Audits every table.
pub fn audit() -> Vec<TableAudit> {
    ALL_TABLES.iter().map(|t| audit_table(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_parsing() {
        assert_eq!(parse_published("3.6K"), Some((3600.0, 100.0)));
        assert_eq!(parse_published("41K"), Some((41_000.0, 1000.0)));
        assert_eq!(parse_published("4M"), Some((4e6, 1e6)));
        assert_eq!(parse_published("0"), Some((0.0, 1.0)));
        assert_eq!(parse_published("x"), None);
    }

    #[test]
    fn skip_channels_add_up() {
        for t in ALL_TABLES {
            for l in t.layers.iter().filter(|l| l.kind == LayerKind::Concat) {
                let sum: usize = l
                    .inputs
                    .iter()
                    .map(|n| [&VGG11_ENCODER, &DECODER].iter().find_map(|t| t.layer(n)).map_or(0, |s| s.out_channels))
                    .sum();
                assert_eq!(sum, l.out_channels, "{}", l.name);
            }
        }
    }
}
