//! Deterministic synthetic judge with an injected score preference.
//!
//! Logits decompose as `signal_weight * signal(quality) + bias + noise`.
//! The signal is a unimodal bump peaking at the label position proportional
//! to the latent quality, the bias is a fixed per-position vector, and the
//! noise is seeded Gaussian, fully determined by (profile, quality, labels).
//! A model family shares one value-anchored bias shape; members differ by
//! scalar gain, signal weight, and noise.

use super::{Provider, ProviderError, TokenLogits};
use crate::corpus::extract_quality;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Fixed per-position score preference plus signal and noise scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub bias: Vec<f64>,
    pub signal_weight: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl BiasProfile {
    pub fn validate(&self, labels: &[String]) -> Result<(), ProviderError> {
        if labels.is_empty() {
            return Err(ProviderError::EmptyLabels);
        }
        if self.bias.len() != labels.len() {
            return Err(ProviderError::InvalidProfile {
                reason: format!(
                    "bias has {} entries for {} labels",
                    self.bias.len(),
                    labels.len()
                ),
            });
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return Err(ProviderError::InvalidProfile {
                reason: "bias contains a non-finite entry".to_string(),
            });
        }
        if !self.signal_weight.is_finite() || self.signal_weight < 0.0 {
            return Err(ProviderError::InvalidProfile {
                reason: format!("signal_weight must be finite and >= 0, got {}", self.signal_weight),
            });
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(ProviderError::InvalidProfile {
                reason: format!("noise_scale must be finite and >= 0, got {}", self.noise_scale),
            });
        }
        Ok(())
    }
}

/// Gaussian bias bump anchored at a score *value* (not a position): the same
/// preferred score lands on different positions as the range shifts.
pub fn value_anchored_bias(
    labels: &[String],
    center: f64,
    width: f64,
    gain: f64,
) -> Result<Vec<f64>, ProviderError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(ProviderError::InvalidProfile {
            reason: format!("bias width must be finite and > 0, got {width}"),
        });
    }
    labels
        .iter()
        .map(|label| {
            let value: f64 = label.parse().map_err(|_| ProviderError::InvalidProfile {
                reason: format!("label {label:?} is not numeric"),
            })?;
            let z = (value - center) / width;
            Ok(gain * (-0.5 * z * z).exp())
        })
        .collect()
}

/// Shared bias shape of a synthetic model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFamily {
    pub bias_center: f64,
    pub bias_width: f64,
}

/// One family member: its own gain, signal strength, and noise. Larger
/// members model bigger LLMs (stronger signal, relatively weaker bias).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub signal_weight: f64,
    pub bias_gain: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticFamily {
    pub fn profile(
        &self,
        member: &FamilyMember,
        labels: &[String],
    ) -> Result<BiasProfile, ProviderError> {
        let bias = value_anchored_bias(labels, self.bias_center, self.bias_width, member.bias_gain)?;
        let profile = BiasProfile {
            bias,
            signal_weight: member.signal_weight,
            noise_scale: member.noise_scale,
            seed: member.seed,
        };
        profile.validate(labels)?;
        Ok(profile)
    }
}

/// Unimodal signal bump over positions, peaking at `quality * (k - 1)`.
fn signal_bump(position: usize, quality: f64, width: usize) -> f64 {
    let center = quality * (width - 1) as f64;
    let d = position as f64 - center;
    -0.5 * d * d
}

fn noise_rng(seed: u64, quality: f64, labels: &[String]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(quality.to_bits().to_le_bytes());
    for label in labels {
        hasher.update(label.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes))
}

/// Synthetic first-token scores for a latent quality: signal + bias + noise.
/// Deterministic in (profile, quality, labels).
pub fn synth_logits(
    profile: &BiasProfile,
    quality: f64,
    labels: &[String],
) -> Result<TokenLogits, ProviderError> {
    profile.validate(labels)?;
    if !(0.0..=1.0).contains(&quality) || !quality.is_finite() {
        return Err(ProviderError::InvalidQuality { value: quality });
    }
    let k = labels.len();
    let mut logits: Vec<f64> = (0..k)
        .map(|i| profile.signal_weight * signal_bump(i, quality, k) + profile.bias[i])
        .collect();
    if profile.noise_scale > 0.0 {
        let mut rng = noise_rng(profile.seed, quality, labels);
        let normal = Normal::new(0.0, profile.noise_scale).expect("finite positive scale");
        for logit in &mut logits {
            *logit += normal.sample(&mut rng);
        }
    }
    TokenLogits::new("synthetic", labels.to_vec(), logits)
}

/// Fallback latent quality for prompts without an embedded marker: a stable
/// hash of the prompt mapped into [0, 1).
fn hashed_quality(prompt: &str) -> f64 {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

/// A biased synthetic judge over a fixed candidate label set.
pub struct SyntheticProvider {
    id: String,
    model_name: String,
    labels: Vec<String>,
    profile: BiasProfile,
}

impl SyntheticProvider {
    pub fn new(
        id: impl Into<String>,
        model_name: impl Into<String>,
        labels: Vec<String>,
        profile: BiasProfile,
    ) -> Result<Self, ProviderError> {
        profile.validate(&labels)?;
        Ok(Self {
            id: id.into(),
            model_name: model_name.into(),
            labels,
            profile,
        })
    }

    pub fn profile(&self) -> &BiasProfile {
        &self.profile
    }

    fn quality_of(&self, prompt: &str) -> f64 {
        extract_quality(prompt)
            .filter(|q| (0.0..=1.0).contains(q))
            .unwrap_or_else(|| hashed_quality(prompt))
    }

    fn logits_for(&self, prompt: &str) -> Result<TokenLogits, ProviderError> {
        let mut logits = synth_logits(&self.profile, self.quality_of(prompt), &self.labels)?;
        logits.provider_id = self.id.clone();
        Ok(logits)
    }
}

impl Provider for SyntheticProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let logits = self.logits_for(prompt)?;
        Ok(logits.labels[logits.argmax()].clone())
    }

    fn first_token_logits(
        &self,
        prompt: &str,
        labels: &[String],
    ) -> Result<TokenLogits, ProviderError> {
        if labels.len() != self.labels.len() {
            return Err(ProviderError::InvalidProfile {
                reason: format!(
                    "provider configured for {} labels, asked for {}",
                    self.labels.len(),
                    labels.len()
                ),
            });
        }
        for (requested, configured) in labels.iter().zip(&self.labels) {
            if requested != configured {
                return Err(ProviderError::LabelMismatch {
                    requested: requested.clone(),
                    configured: configured.clone(),
                });
            }
        }
        self.logits_for(prompt)
    }
}

/// First parenthesized `(MIN-MAX)` range in the text, as the builtin
/// templates state the score window in their criteria line.
fn extract_range(prompt: &str) -> Option<crate::ranges::ScoreRange> {
    let mut rest = prompt;
    while let Some(open) = rest.find('(') {
        let tail = &rest[open + 1..];
        if let Some(close) = tail.find(')') {
            if let Ok(range) = tail[..close].parse() {
                return Some(range);
            }
            rest = &tail[close + 1..];
        } else {
            break;
        }
    }
    None
}

/// A biased synthetic judge that answers for any candidate label set,
/// rebuilding its value-anchored bias per request. One such backend can
/// serve every score range in a run, the way one real model would.
pub struct FamilyProvider {
    id: String,
    model_name: String,
    family: SyntheticFamily,
    member: FamilyMember,
}

impl FamilyProvider {
    pub fn new(
        id: impl Into<String>,
        model_name: impl Into<String>,
        family: SyntheticFamily,
        member: FamilyMember,
    ) -> Self {
        Self {
            id: id.into(),
            model_name: model_name.into(),
            family,
            member,
        }
    }

    fn quality_of(&self, prompt: &str) -> f64 {
        extract_quality(prompt)
            .filter(|q| (0.0..=1.0).contains(q))
            .unwrap_or_else(|| hashed_quality(prompt))
    }

    fn logits_for(&self, prompt: &str, labels: &[String]) -> Result<TokenLogits, ProviderError> {
        let profile = self.family.profile(&self.member, labels)?;
        let mut logits = synth_logits(&profile, self.quality_of(prompt), labels)?;
        logits.provider_id = self.id.clone();
        Ok(logits)
    }
}

impl Provider for FamilyProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    /// Free-text judgment: reads the score window out of the prompt's
    /// criteria line, falling back to 1-5 when no window is stated.
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let range = extract_range(prompt)
            .unwrap_or_else(|| crate::ranges::ScoreRange::new(1, 5).expect("static bounds"));
        let labels = range.candidate_labels();
        let logits = self.logits_for(prompt, &labels)?;
        Ok(logits.labels[logits.argmax()].clone())
    }

    fn first_token_logits(
        &self,
        prompt: &str,
        labels: &[String],
    ) -> Result<TokenLogits, ProviderError> {
        self.logits_for(prompt, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::quality_marker;
    use crate::ranges::ScoreRange;

    fn labels(min: i32, max: i32) -> Vec<String> {
        ScoreRange::new(min, max).unwrap().candidate_labels()
    }

    fn flat_profile(k: usize, signal_weight: f64, noise_scale: f64, seed: u64) -> BiasProfile {
        BiasProfile {
            bias: vec![0.0; k],
            signal_weight,
            noise_scale,
            seed,
        }
    }

    #[test]
    fn peak_quality_puts_argmax_on_top_label() {
        let labels = labels(0, 4);
        let profile = flat_profile(5, 1.0, 0.0, 0);
        let logits = synth_logits(&profile, 1.0, &labels).unwrap();
        assert_eq!(logits.argmax(), 4);
        let logits = synth_logits(&profile, 0.0, &labels).unwrap();
        assert_eq!(logits.argmax(), 0);
    }

    #[test]
    fn mid_quality_peaks_at_proportional_position() {
        let labels = labels(0, 4);
        let profile = flat_profile(5, 1.0, 0.0, 0);
        // quality 0.75 puts the signal center at position 3
        let logits = synth_logits(&profile, 0.75, &labels).unwrap();
        assert_eq!(logits.argmax(), 3);
    }

    #[test]
    fn exact_half_centers_tie_toward_the_lower_position() {
        let labels = labels(0, 4);
        let profile = flat_profile(5, 1.0, 0.0, 0);
        // quality 0.625 puts the center at 2.5, equidistant from 2 and 3
        let logits = synth_logits(&profile, 0.625, &labels).unwrap();
        assert_eq!(logits.logits[2], logits.logits[3]);
        assert_eq!(logits.argmax(), 2);
    }

    #[test]
    fn synth_logits_is_deterministic() {
        let labels = labels(2, 6);
        let profile = BiasProfile {
            bias: vec![0.1, 0.2, 1.5, 0.3, 0.0],
            signal_weight: 2.0,
            noise_scale: 0.7,
            seed: 99,
        };
        let a = synth_logits(&profile, 0.42, &labels).unwrap();
        let b = synth_logits(&profile, 0.42, &labels).unwrap();
        assert_eq!(a, b);
        let c = synth_logits(&profile, 0.43, &labels).unwrap();
        assert_ne!(a.logits, c.logits);
    }

    #[test]
    fn noise_scale_zero_is_noiseless() {
        let labels = labels(0, 4);
        let profile = flat_profile(5, 1.0, 0.0, 7);
        let a = synth_logits(&profile, 0.5, &labels).unwrap();
        let expected: Vec<f64> = (0..5).map(|i| signal_bump(i, 0.5, 5)).collect();
        assert_eq!(a.logits, expected);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let labels = labels(0, 4);
        let profile = flat_profile(4, 1.0, 0.0, 0);
        assert!(matches!(
            synth_logits(&profile, 0.5, &labels),
            Err(ProviderError::InvalidProfile { .. })
        ));
        let profile = flat_profile(5, 1.0, 0.0, 0);
        assert!(matches!(
            synth_logits(&profile, 1.5, &labels),
            Err(ProviderError::InvalidQuality { .. })
        ));
    }

    #[test]
    fn family_members_share_the_bias_shape_up_to_gain() {
        let family = SyntheticFamily {
            bias_center: 4.0,
            bias_width: 0.8,
        };
        let shared = labels(2, 6);
        let big = family
            .profile(
                &FamilyMember {
                    signal_weight: 4.0,
                    bias_gain: 2.0,
                    noise_scale: 0.0,
                    seed: 1,
                },
                &shared,
            )
            .unwrap();
        let small = family
            .profile(
                &FamilyMember {
                    signal_weight: 1.0,
                    bias_gain: 6.0,
                    noise_scale: 0.0,
                    seed: 2,
                },
                &shared,
            )
            .unwrap();
        for (b, s) in big.bias.iter().zip(&small.bias) {
            assert!((s - 3.0 * b).abs() < 1e-12, "gain scaling broke: {b} vs {s}");
        }
        // The bias is value-anchored: the peak follows the score 4 label.
        let low = family
            .profile(
                &FamilyMember {
                    signal_weight: 1.0,
                    bias_gain: 1.0,
                    noise_scale: 0.0,
                    seed: 0,
                },
                &labels(0, 4),
            )
            .unwrap();
        let peak_low = low.bias.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(low.bias[4], peak_low);
        let mid = family
            .profile(
                &FamilyMember {
                    signal_weight: 1.0,
                    bias_gain: 1.0,
                    noise_scale: 0.0,
                    seed: 0,
                },
                &labels(2, 6),
            )
            .unwrap();
        let peak_mid = mid.bias.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(mid.bias[2], peak_mid);
    }

    #[test]
    fn provider_reads_quality_markers_from_the_prompt() {
        let labels = labels(0, 4);
        let provider = SyntheticProvider::new(
            "main",
            "synth-big",
            labels.clone(),
            flat_profile(5, 1.0, 0.0, 0),
        )
        .unwrap();
        let prompt = format!("Document...\nSummary ({})...", quality_marker(1.0));
        let logits = provider.first_token_logits(&prompt, &labels).unwrap();
        assert_eq!(logits.argmax(), 4);
        assert_eq!(logits.provider_id, "main");
        assert_eq!(provider.complete(&prompt).unwrap(), "4");
    }

    #[test]
    fn markerless_prompts_get_stable_hashed_quality() {
        let labels = labels(0, 4);
        let provider = SyntheticProvider::new(
            "main",
            "synth-big",
            labels.clone(),
            flat_profile(5, 1.0, 0.0, 0),
        )
        .unwrap();
        let a = provider.first_token_logits("no marker here", &labels).unwrap();
        let b = provider.first_token_logits("no marker here", &labels).unwrap();
        assert_eq!(a, b);
        assert!((0.0..1.0).contains(&hashed_quality("anything")));
    }

    #[test]
    fn mismatched_label_requests_are_rejected() {
        let provider = SyntheticProvider::new(
            "main",
            "synth-big",
            labels(0, 4),
            flat_profile(5, 1.0, 0.0, 0),
        )
        .unwrap();
        let err = provider
            .first_token_logits("p", &labels(1, 5))
            .unwrap_err();
        assert!(matches!(err, ProviderError::LabelMismatch { .. }));
    }

    fn test_family_provider(bias_gain: f64) -> FamilyProvider {
        FamilyProvider::new(
            "main",
            "synth-big",
            SyntheticFamily {
                bias_center: 4.0,
                bias_width: 0.8,
            },
            FamilyMember {
                signal_weight: 1.0,
                bias_gain,
                noise_scale: 0.0,
                seed: 0,
            },
        )
    }

    #[test]
    fn family_provider_matches_a_bound_provider_on_its_label_set() {
        let labels = labels(1, 5);
        let family = SyntheticFamily {
            bias_center: 4.0,
            bias_width: 0.8,
        };
        let member = FamilyMember {
            signal_weight: 1.0,
            bias_gain: 3.0,
            noise_scale: 0.2,
            seed: 9,
        };
        let bound = SyntheticProvider::new(
            "main",
            "synth-big",
            labels.clone(),
            family.profile(&member, &labels).unwrap(),
        )
        .unwrap();
        let dynamic = FamilyProvider::new("main", "synth-big", family, member);
        let prompt = format!("judge this {}", quality_marker(0.42));
        assert_eq!(
            bound.first_token_logits(&prompt, &labels).unwrap(),
            dynamic.first_token_logits(&prompt, &labels).unwrap()
        );
    }

    #[test]
    fn family_provider_anchors_its_bias_to_score_values_across_ranges() {
        // Pure bias (no signal): argmax sits at value 4 wherever that
        // value lands in the requested window.
        let provider = FamilyProvider::new(
            "main",
            "synth-big",
            SyntheticFamily {
                bias_center: 4.0,
                bias_width: 0.8,
            },
            FamilyMember {
                signal_weight: 0.0,
                bias_gain: 5.0,
                noise_scale: 0.0,
                seed: 0,
            },
        );
        let one_five = provider.first_token_logits("p", &labels(1, 5)).unwrap();
        assert_eq!(one_five.labels[one_five.argmax()], "4");
        let two_six = provider.first_token_logits("p", &labels(2, 6)).unwrap();
        assert_eq!(two_six.labels[two_six.argmax()], "4");
        let zero_four = provider.first_token_logits("p", &labels(0, 4)).unwrap();
        assert_eq!(zero_four.labels[zero_four.argmax()], "4");
    }

    #[test]
    fn range_extraction_finds_the_criteria_parenthetical() {
        assert_eq!(
            extract_range("Coherence (2-6) - quality of all sentences."),
            Some(ScoreRange::new(2, 6).unwrap())
        );
        assert_eq!(
            extract_range("Consistency (-2-2) - factual alignment."),
            Some(ScoreRange::new(-2, 2).unwrap())
        );
        assert_eq!(
            extract_range("(scores ONLY) then Coherence (0-4) here"),
            Some(ScoreRange::new(0, 4).unwrap())
        );
        assert_eq!(extract_range("no window stated"), None);
        let rendered = crate::prompts::PromptSet::builtin()
            .render(
                crate::prompts::Dimension::Coherence,
                ScoreRange::new(3, 7).unwrap(),
                "doc text",
                "summary text",
            )
            .unwrap();
        assert_eq!(extract_range(&rendered), Some(ScoreRange::new(3, 7).unwrap()));
    }

    #[test]
    fn family_provider_completion_follows_the_prompted_window() {
        let provider = test_family_provider(0.0);
        let prompt = crate::prompts::PromptSet::builtin()
            .render(
                crate::prompts::Dimension::Coherence,
                ScoreRange::new(2, 6).unwrap(),
                "doc text",
                &format!("summary {}", quality_marker(1.0)),
            )
            .unwrap();
        // Quality 1.0 with no bias peaks at the top of the prompted window.
        assert_eq!(provider.complete(&prompt).unwrap(), "6");
        // Without a stated window the completion falls back to 1-5.
        let bare = format!("rate this {}", quality_marker(1.0));
        assert_eq!(provider.complete(&bare).unwrap(), "5");
    }
}
