//! Expert avatars: simulated or remote Likert raters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::item::EvalItem;
use super::stats::aggregate;
use crate::distill::{RemoteTeacher, TeacherMode};
use crate::error::{Error, Result};
use crate::hashing::{fnv1a, fnv1a_extend, splitmix64, unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AvatarKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvatarSpec {
    pub avatar_id: String,
    pub persona: String,
    pub temperature: f64,
    pub bias: f64,
    pub noise_sd: f64,
    #[serde(default)]
    pub kind: AvatarKind,
    #[serde(default)]
    pub seed: u64,
}

impl AvatarSpec {
    pub fn mock(avatar_id: impl Into<String>, persona: impl Into<String>, bias: f64, noise_sd: f64, seed: u64) -> Self {
        AvatarSpec {
            avatar_id: avatar_id.into(),
            persona: persona.into(),
            temperature: 1.0,
            bias,
            noise_sd,
            kind: AvatarKind::Mock,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("avatar `{}`: temperature must be >= 0", self.avatar_id)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) || !self.bias.is_finite() {
            return Err(Error::InvalidConfig(format!("avatar `{}`: bias and noise_sd must be finite, noise_sd >= 0", self.avatar_id)));
        }
        Ok(())
    }
}

pub const DEFAULT_AVATAR_COUNT: usize = 5;

/// Five mock avatars with distinct personas and mild opposing biases.
pub fn default_avatars(seed: u64) -> Vec<AvatarSpec> {
    [
        ("attending", "attending physician", 0.0),
        ("pharmacist", "clinical pharmacist", -0.3),
        ("resident", "internal medicine resident", 0.3),
        ("nurse", "nurse specialist", 0.15),
        ("methodologist", "guideline methodologist", -0.15),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (id, persona, bias))| AvatarSpec::mock(id, persona, bias, 0.6, splitmix64(seed ^ i as u64)))
    .collect()
}

/// The item's underlying quality on the 1–5 scale: its reference quality
/// when known, otherwise a stable pseudo-random value from its text.
pub fn latent_quality(item: &EvalItem) -> f64 {
    item.reference_quality
        .unwrap_or_else(|| 1.0 + 4.0 * unit(splitmix64(fnv1a_extend(fnv1a(item.case_text.as_bytes()), item.therapy_text.as_bytes()))))
}

/// One avatar's Likert score for `item`. Mock avatars add seeded Gaussian
/// noise (sd `noise_sd·temperature`) and their bias to the latent quality.
pub fn avatar_score(item: &EvalItem, avatar: &AvatarSpec, remote: Option<&RemoteTeacher>) -> Result<u8> {
    match avatar.kind {
        AvatarKind::Mock => {
            let sd = avatar.noise_sd * avatar.temperature;
            let noise = if sd > 0.0 {
                let h = fnv1a_extend(fnv1a(avatar.avatar_id.as_bytes()), item.item_id.as_bytes());
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(h ^ avatar.seed));
                Normal::new(0.0, sd).map_err(|e| Error::InvalidConfig(e.to_string()))?.sample(&mut rng)
            } else {
                0.0
            };
            Ok((latent_quality(item) + avatar.bias + noise).clamp(1.0, 5.0).round() as u8)
        }
        AvatarKind::Remote => {
            let teacher = remote.ok_or_else(|| Error::InvalidConfig(format!("avatar `{}` is remote but no endpoint is configured", avatar.avatar_id)))?;
            let context = format!("Case: {}\nTherapy: {}", item.case_text, item.therapy_text);
            let r = teacher.call(
                TeacherMode::Score,
                context,
                json!({ "avatar_id": avatar.avatar_id, "persona": avatar.persona, "temperature": avatar.temperature }),
            )?;
            match r.text.trim().parse::<u8>() {
                Ok(s) if (1..=5).contains(&s) => Ok(s),
                _ => Err(Error::RemoteMalformed(format!("score `{}` is not a Likert label", r.text.trim()))),
            }
        }
    }
}

/// Scores every item with every avatar and fills median and std.
pub fn score_items(items: &mut [EvalItem], avatars: &[AvatarSpec], remote: Option<&RemoteTeacher>) -> Result<()> {
    if avatars.is_empty() {
        return Err(Error::Empty("avatar list"));
    }
    for a in avatars {
        a.validate()?;
    }
    for item in items.iter_mut() {
        item.avatar_scores = avatars.iter().map(|a| avatar_score(item, a, remote)).collect::<Result<_>>()?;
        (item.median_score, item.score_std) = aggregate(&item.avatar_scores)?;
    }
    Ok(())
}
