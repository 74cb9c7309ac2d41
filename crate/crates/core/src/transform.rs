//! Sample representation transforms: api-call token text and byte-packed
//! grayscale images.
//!
//! The image path follows the sample-transformation flow: serialize the
//! token stream to bytes, pack 8 bits per pixel, break lines every N
//! pixels, zero-pad the final row, and optionally resize by nearest
//! neighbor to a model input size.

use std::fmt;
use std::io::Write;

use crate::behavior_log::BehaviorLog;

/// An api-name token stream partitioned into per-process "sentences".
/// `sentence_breaks[i]` is the index of the first token of sentence i+1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenText {
    pub sample_id: String,
    pub tokens: Vec<String>,
    pub sentence_breaks: Vec<usize>,
}

impl TokenText {
    pub fn new(sample_id: String, tokens: Vec<String>, sentence_breaks: Vec<usize>) -> Self {
        debug_assert!(sentence_breaks.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(sentence_breaks.iter().all(|&b| b > 0 && b < tokens.len()));
        TokenText {
            sample_id,
            tokens,
            sentence_breaks,
        }
    }

    /// Tokens joined by single spaces, newline at sentence breaks.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut breaks = self.sentence_breaks.iter().peekable();
        for (i, token) in self.tokens.iter().enumerate() {
            if i > 0 {
                if breaks.peek() == Some(&&i) {
                    out.push('\n');
                    breaks.next();
                } else {
                    out.push(' ');
                }
            }
            out.push_str(token);
        }
        out
    }

    /// Token index ranges of each sentence.
    pub fn sentences(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges = Vec::with_capacity(self.sentence_breaks.len() + 1);
        let mut start = 0;
        for &b in &self.sentence_breaks {
            ranges.push(start..b);
            start = b;
        }
        ranges.push(start..self.tokens.len());
        ranges
    }
}

/// Grayscale byte image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug)]
pub enum TransformError {
    ZeroWidth,
    EmptyData,
}

impl fmt::Display for TransformError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformError::ZeroWidth => write!(f, "image width must be at least 1"),
            TransformError::EmptyData => write!(f, "input data must be non-empty"),
        }
    }
}

impl std::error::Error for TransformError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformConfig {
    /// Line-break width N for the raw image.
    pub width: usize,
    /// Optional nearest-neighbor resize target (W, H).
    pub target: Option<(usize, usize)>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            width: 256,
            target: Some((64, 64)),
        }
    }
}

/// Extracts the api-name token stream; a new sentence starts at every
/// call_pid change.
pub fn to_token_text(log: &BehaviorLog) -> TokenText {
    let tokens: Vec<String> = log.actions.iter().map(|a| a.api_name.clone()).collect();
    let mut breaks = Vec::new();
    for (i, pair) in log.actions.windows(2).enumerate() {
        if pair[0].call_pid != pair[1].call_pid {
            breaks.push(i + 1);
        }
    }
    TokenText {
        sample_id: log.sample_id.clone(),
        tokens,
        sentence_breaks: breaks,
    }
}

/// Combines adjacent groups of eight bits (MSB first) into bytes.
/// A trailing partial group is zero-padded on the right.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| {
            let mut byte = 0u8;
            for (i, bit) in chunk.iter().enumerate() {
                if *bit != 0 {
                    byte |= 1 << (7 - i);
                }
            }
            byte
        })
        .collect()
}

/// Lays bytes out row-major at the given width, zero-padding the final
/// partial row, then optionally resizes to `target` by nearest neighbor.
pub fn to_image(
    data: &[u8],
    width: usize,
    target: Option<(usize, usize)>,
) -> Result<MalImage, TransformError> {
    if width == 0 {
        return Err(TransformError::ZeroWidth);
    }
    if data.is_empty() {
        return Err(TransformError::EmptyData);
    }
    let height = data.len().div_ceil(width);
    let mut pixels = vec![0u8; width * height];
    pixels[..data.len()].copy_from_slice(data);
    let image = MalImage {
        width,
        height,
        pixels,
    };
    Ok(match target {
        Some((w, h)) => resize_nearest(&image, w, h),
        None => image,
    })
}

/// Nearest-neighbor resize; resizing to the source dimensions is the
/// identity.
pub fn resize_nearest(image: &MalImage, width: usize, height: usize) -> MalImage {
    assert!(width > 0 && height > 0);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let src_y = y * image.height / height;
        for x in 0..width {
            let src_x = x * image.width / width;
            pixels.push(image.pixels[src_y * image.width + src_x]);
        }
    }
    MalImage {
        width,
        height,
        pixels,
    }
}

/// Serializes a token text as UTF-8 and images it under `config`.
pub fn token_text_to_image(
    text: &TokenText,
    config: &TransformConfig,
) -> Result<MalImage, TransformError> {
    if text.tokens.is_empty() {
        return Err(TransformError::EmptyData);
    }
    to_image(text.to_text().as_bytes(), config.width, config.target)
}

/// Full sample-to-image flow: tokenize, serialize, pack, reshape.
pub fn sample_to_image(
    log: &BehaviorLog,
    config: &TransformConfig,
) -> Result<MalImage, TransformError> {
    token_text_to_image(&to_token_text(log), config)
}

impl MalImage {
    /// Normalized 256-bin pixel-intensity histogram.
    pub fn histogram(&self) -> Vec<f64> {
        let mut bins = vec![0.0f64; 256];
        for &p in &self.pixels {
            bins[p as usize] += 1.0;
        }
        let total = self.pixels.len() as f64;
        for b in &mut bins {
            *b /= total;
        }
        bins
    }

    /// Binary PGM (P5) encoding.
    pub fn write_pgm(&self, out: &mut dyn Write) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::Action;

    fn log_with_pids(spec: &[(&str, u64)]) -> BehaviorLog {
        let actions = spec
            .iter()
            .enumerate()
            .map(|(i, (name, pid))| Action {
                api_name: name.to_string(),
                call_name: "p.exe".into(),
                call_pid: *pid,
                call_time: i as i64,
                err_code: 0,
                ret_value: 0,
                status_value: 0,
                api_args: vec![],
                ex_info: vec![],
            })
            .collect();
        BehaviorLog {
            sample_id: "t".into(),
            actions,
            source_path: String::new(),
        }
    }

    #[test]
    fn sentence_break_at_pid_change() {
        let log = log_with_pids(&[("A", 1), ("B", 1), ("C", 2)]);
        let text = to_token_text(&log);
        assert_eq!(text.tokens, ["A", "B", "C"]);
        assert_eq!(text.sentence_breaks, [2]);
        assert_eq!(text.to_text(), "A B\nC");
    }

    #[test]
    fn single_action_no_breaks() {
        let text = to_token_text(&log_with_pids(&[("A", 1)]));
        assert_eq!(text.tokens.len(), 1);
        assert!(text.sentence_breaks.is_empty());
    }

    #[test]
    fn constant_pid_no_breaks() {
        let text = to_token_text(&log_with_pids(&[("A", 3), ("B", 3), ("C", 3)]));
        assert!(text.sentence_breaks.is_empty());
    }

    #[test]
    fn pack_bits_examples() {
        assert_eq!(pack_bits(&[0, 1, 0, 0, 0, 0, 0, 1]), vec![65]);
        assert_eq!(pack_bits(&[1, 1, 1, 1, 1, 1, 1, 1]), vec![255]);
        assert_eq!(pack_bits(&[1]), vec![128]); // right-padded
    }

    #[test]
    fn image_16_bytes_width_4() {
        let data: Vec<u8> = (0..16).collect();
        let img = to_image(&data, 4, None).unwrap();
        assert_eq!((img.width, img.height), (4, 4));
        assert_eq!(img.pixels, data);
    }

    #[test]
    fn partial_row_zero_padded() {
        let data: Vec<u8> = (1..=10).collect();
        let img = to_image(&data, 4, None).unwrap();
        assert_eq!((img.width, img.height), (4, 3));
        assert_eq!(&img.pixels[10..], &[0, 0]);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(matches!(
            to_image(&[1], 0, None),
            Err(TransformError::ZeroWidth)
        ));
        assert!(matches!(
            to_image(&[], 4, None),
            Err(TransformError::EmptyData)
        ));
    }

    #[test]
    fn resize_to_source_is_identity() {
        let data: Vec<u8> = (0..64).collect();
        let img = to_image(&data, 8, None).unwrap();
        assert_eq!(resize_nearest(&img, 8, 8), img);
    }

    #[test]
    fn identical_logs_give_identical_images() {
        let log = log_with_pids(&[("NtOpen", 1), ("NtRead", 1), ("NtClose", 2)]);
        let cfg = TransformConfig::default();
        assert_eq!(
            sample_to_image(&log, &cfg).unwrap(),
            sample_to_image(&log, &cfg).unwrap()
        );
    }

    #[test]
    fn one_token_difference_changes_raw_image() {
        let a = log_with_pids(&[("NtOpen", 1), ("NtRead", 1)]);
        let b = log_with_pids(&[("NtOpen", 1), ("NtSeek", 1)]);
        let cfg = TransformConfig {
            width: 16,
            target: None,
        };
        let ia = sample_to_image(&a, &cfg).unwrap();
        let ib = sample_to_image(&b, &cfg).unwrap();
        assert_ne!(ia.pixels, ib.pixels);
    }

    #[test]
    fn empty_tokens_error() {
        let text = TokenText {
            sample_id: "e".into(),
            tokens: vec![],
            sentence_breaks: vec![],
        };
        assert!(matches!(
            token_text_to_image(&text, &TransformConfig::default()),
            Err(TransformError::EmptyData)
        ));
    }

    #[test]
    fn pgm_header() {
        let img = to_image(&[7, 8, 9], 3, None).unwrap();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&buf[buf.len() - 3..], &[7, 8, 9]);
    }

    #[test]
    fn histogram_normalized() {
        let img = to_image(&[0, 0, 255, 255], 2, None).unwrap();
        let h = img.histogram();
        assert_eq!(h[0], 0.5);
        assert_eq!(h[255], 0.5);
        assert_eq!(h.iter().sum::<f64>(), 1.0);
    }
}
