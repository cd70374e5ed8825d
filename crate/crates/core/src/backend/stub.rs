//! Deterministic in-process backends for tests and offline runs.
//!
//! The stub captioner answers from fixed vocabularies keyed by a stable
//! hash of (image_id, attribute kind), so the same catalog always yields
//! the same bank regardless of endpoint or concurrency. The stub
//! generator emits a small text payload whose bytes are a pure function
//! of (prompt, seed, params).

use crate::rng::stable_hash64;

use super::{
    BackendError, CaptionBackend, CaptionRequest, CaptionResponse, GenerationBackend,
    GenerationRequest,
};

/// First line of every stub-generated image payload.
pub const STUB_IMAGE_MAGIC: &str = "STUB-IMAGE-V1";

const BACKGROUNDS: [&str; 16] = [
    "clear blue sky",
    "snowy mountain range",
    "dense green forest",
    "airport tarmac",
    "open grass field",
    "city skyline",
    "calm lake water",
    "sandy desert",
    "cloudy grey sky",
    "rocky cliffside",
    "flower meadow",
    "gravel runway",
    "sunset horizon",
    "shallow river",
    "tree-lined street",
    "foggy valley",
];

const POSES: [&str; 8] = [
    "flying",
    "taking off",
    "landing",
    "parked",
    "taxiing",
    "banking left",
    "climbing steeply",
    "standing still",
];

/// Captioner that answers "background" prompts from one vocabulary and
/// "pose" prompts from another, keyed by image id.
pub struct StubCaptioner {
    name: String,
}

impl StubCaptioner {
    pub fn new(name: &str) -> Self {
        StubCaptioner {
            name: name.to_string(),
        }
    }
}

impl CaptionBackend for StubCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        request.validate()?;
        let (kind, vocab): (&str, &[&str]) = if request.prompt.contains("pose") {
            ("pose", &POSES)
        } else {
            ("background", &BACKGROUNDS)
        };
        let key = stable_hash64(&[b"caption", request.image_id.as_bytes(), kind.as_bytes()]);
        Ok(CaptionResponse {
            image_id: request.image_id.clone(),
            text: vocab[(key % vocab.len() as u64) as usize].to_string(),
            model_name: self.name.clone(),
        })
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Generator whose payload embeds a digest of (prompt, seed) plus the
/// sampling knobs, making byte-level reproducibility checkable.
pub struct StubGenerator {
    name: String,
}

impl StubGenerator {
    pub fn new(name: &str) -> Self {
        StubGenerator {
            name: name.to_string(),
        }
    }
}

impl GenerationBackend for StubGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, BackendError> {
        request.validate()?;
        let mut keyed = request.prompt.as_bytes().to_vec();
        keyed.extend_from_slice(&request.seed.to_le_bytes());
        let digest = crate::digest::sha256_hex(&keyed);
        let payload = format!(
            "{STUB_IMAGE_MAGIC}\ndigest={}\nseed={}\nguidance_scale={}\nnum_steps={}\nsize={}x{}\nprompt={}\n",
            digest,
            request.seed,
            request.params.guidance_scale,
            request.params.num_steps,
            request.params.width,
            request.params.height,
            request.prompt,
        );
        Ok(payload.into_bytes())
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::GenerationParams;
    use crate::prompt::{render_extraction_prompt, AttributeKind};

    fn request(image_id: &str, prompt: &str) -> CaptionRequest {
        CaptionRequest {
            image_id: image_id.into(),
            image_bytes: vec![1, 2, 3],
            prompt: prompt.into(),
        }
    }

    #[test]
    fn captions_are_deterministic_and_endpoint_independent() {
        let prompt = render_extraction_prompt(AttributeKind::Background, "bird").unwrap();
        let a = StubCaptioner::new("stub://a")
            .caption(&request("img_001", &prompt))
            .unwrap();
        let b = StubCaptioner::new("stub://b")
            .caption(&request("img_001", &prompt))
            .unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.image_id, "img_001");
        assert_eq!(a.model_name, "stub://a");
    }

    #[test]
    fn prompt_kind_routes_to_the_right_vocabulary() {
        let backend = StubCaptioner::new("stub://captioner");
        let bg_prompt = render_extraction_prompt(AttributeKind::Background, "bird").unwrap();
        let pose_prompt = render_extraction_prompt(AttributeKind::Pose, "bird").unwrap();
        let bg = backend.caption(&request("img_001", &bg_prompt)).unwrap();
        let pose = backend.caption(&request("img_001", &pose_prompt)).unwrap();
        assert!(BACKGROUNDS.contains(&bg.text.as_str()), "{}", bg.text);
        assert!(POSES.contains(&pose.text.as_str()), "{}", pose.text);
    }

    #[test]
    fn different_images_spread_over_the_vocabulary() {
        let backend = StubCaptioner::new("stub://captioner");
        let prompt = render_extraction_prompt(AttributeKind::Background, "bird").unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..40 {
            let caption = backend
                .caption(&request(&format!("img_{i:03}"), &prompt))
                .unwrap();
            seen.insert(caption.text);
        }
        assert!(seen.len() >= 8, "only {} distinct captions", seen.len());
    }

    #[test]
    fn generated_payload_embeds_prompt_seed_digest() {
        let backend = StubGenerator::new("stub://generator");
        let req = GenerationRequest {
            prompt: "a photo of a gull".into(),
            seed: 99,
            params: GenerationParams::default(),
        };
        let bytes = backend.generate(&req).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(STUB_IMAGE_MAGIC));

        let mut keyed = req.prompt.as_bytes().to_vec();
        keyed.extend_from_slice(&99u64.to_le_bytes());
        let expected = crate::digest::sha256_hex(&keyed);
        assert!(text.contains(&format!("digest={expected}")));
        assert!(text.contains("guidance_scale=2\n"));
        assert!(text.contains("num_steps=50\n"));

        assert_eq!(backend.generate(&req).unwrap(), bytes);
        let other = GenerationRequest { seed: 100, ..req };
        assert_ne!(backend.generate(&other).unwrap(), bytes);
    }
}
