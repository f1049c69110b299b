//! Captioner clients and the recaptioning loop.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::caption::{validate_caption, TactileCaption, CAPTION_ARITY};
use super::ManifestRecord;
use crate::error::{Error, Result};
use crate::hash::{derive_seed, fnv1a};

/// Recaptioning prompt; `{class_name}` and `{caption}` are substituted.
pub const PROMPT_TEMPLATE: &str = "## Task
Create a tactile caption for an object in the given image based on its class name and an image description.
Class: {class_name}
Description: {caption}

## Instructions
1. Provide exactly 5 adjectives that refer solely to how the object feels to the touch--focusing on texture, flexibility, density, and material properties.
2. Try to include more varied and nuanced tactile descriptors.
3. Do not include adjectives related to visual appearance, shape, color, temperature, sound, weight, or any non-tactile properties.
4. Respond using the exact format: \"adj1, adj2, adj3, adj4, adj5\".

Remember: Your ENTIRE response must be ONLY 5 adjectives separated by commas.";

pub fn build_prompt(record: &ManifestRecord) -> String {
    PROMPT_TEMPLATE
        .replace("{class_name}", &record.class_name)
        .replace("{caption}", &record.source_caption)
}

/// Something that turns a prompt into a one-line caption response.
pub trait Captioner {
    fn complete(&mut self, prompt: &str) -> Result<String>;
}

/// Materials and the adjectives the stub draws from. Consecutive pairs
/// (0-1, 2-3, ...) feel alike and share a tactile family.
pub const MATERIAL_LEXICON: &[(&str, [&str; 10])] = &[
    ("leather", ["supple", "smooth", "soft", "grainy", "flexible", "firm", "pliable", "textured", "worn", "dense"]),
    ("rubber", ["elastic", "grippy", "flexible", "springy", "smooth", "soft", "bouncy", "pliable", "firm", "tacky"]),
    ("wood", ["hard", "grainy", "solid", "rough", "smooth", "sturdy", "dense", "ridged", "firm", "textured"]),
    ("cork", ["spongy", "light", "porous", "compressible", "soft", "grainy", "springy", "rough", "textured", "resilient"]),
    ("metal", ["hard", "smooth", "rigid", "solid", "polished", "slick", "dense", "sleek", "unyielding", "seamless"]),
    ("glass", ["smooth", "hard", "slick", "rigid", "brittle", "seamless", "polished", "flat", "sleek", "fragile"]),
    ("cotton", ["soft", "fluffy", "light", "breathable", "plush", "fuzzy", "airy", "gentle", "pliable", "cushy"]),
    ("wool", ["fuzzy", "soft", "coarse", "fibrous", "woolly", "plush", "itchy", "thick", "springy", "dense"]),
    ("stone", ["rough", "hard", "gritty", "coarse", "solid", "uneven", "craggy", "dense", "rugged", "abrasive"]),
    ("ceramic", ["smooth", "hard", "glazed", "brittle", "rigid", "solid", "sleek", "fragile", "polished", "dense"]),
    ("plastic", ["smooth", "light", "rigid", "slick", "flexible", "hollow", "thin", "sleek", "firm", "synthetic"]),
    ("paper", ["thin", "crisp", "light", "smooth", "papery", "flimsy", "dry", "fibrous", "foldable", "delicate"]),
];

/// Deterministic offline captioner keyed by a hash of the class name.
#[derive(Clone, Debug, Default)]
pub struct StubCaptioner;

impl StubCaptioner {
    /// Lexicon index of the material the stub assigns to a class.
    pub fn material_of(class_name: &str) -> u64 {
        fnv1a(class_name.as_bytes()) % MATERIAL_LEXICON.len() as u64
    }

    pub fn caption_for(class_name: &str) -> TactileCaption {
        let key = fnv1a(class_name.as_bytes());
        let (_, words) = MATERIAL_LEXICON[(key % MATERIAL_LEXICON.len() as u64) as usize];
        let mut pool = words.to_vec();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed("stub", &[key])));
        TactileCaption::new(&pool[..CAPTION_ARITY]).expect("lexicon words are valid")
    }
}

fn prompt_field<'a>(prompt: &'a str, key: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(key))
        .map(str::trim)
}

impl Captioner for StubCaptioner {
    fn complete(&mut self, prompt: &str) -> Result<String> {
        let class = prompt_field(prompt, "Class:")
            .ok_or_else(|| Error::Transport("stub prompt has no Class: line".into()))?;
        Ok(Self::caption_for(class).to_string())
    }
}

/// Escapes a prompt onto one wire line.
pub fn encode_request(prompt: &str) -> String {
    prompt.replace('\n', "\\n")
}

pub fn decode_request(line: &str) -> String {
    line.replace("\\n", "\n")
}

/// Line protocol client: one escaped prompt line out, one caption line back.
/// An empty response line is a captioner-side error.
pub struct WireCaptioner<R, W> {
    reader: R,
    writer: W,
    child: Option<Child>,
}

impl<R: BufRead, W: Write> WireCaptioner<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        WireCaptioner {
            reader,
            writer,
            child: None,
        }
    }
}

impl WireCaptioner<BufReader<ChildStdout>, BufWriter<ChildStdin>> {
    /// Spawns `program args...` and talks to it over stdin/stdout.
    pub fn spawn(program: &str, args: &[&str]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        Ok(WireCaptioner {
            reader: BufReader::new(stdout),
            writer: BufWriter::new(stdin),
            child: Some(child),
        })
    }
}

impl WireCaptioner<BufReader<TcpStream>, BufWriter<TcpStream>> {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io(addr, e))?;
        let read_half = stream.try_clone().map_err(|e| Error::io(addr, e))?;
        Ok(WireCaptioner::new(BufReader::new(read_half), BufWriter::new(stream)))
    }
}

impl<R: BufRead, W: Write> Captioner for WireCaptioner<R, W> {
    fn complete(&mut self, prompt: &str) -> Result<String> {
        let send = |w: &mut W| -> std::io::Result<()> {
            w.write_all(encode_request(prompt).as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()
        };
        send(&mut self.writer).map_err(|e| Error::Transport(format!("send failed: {e}")))?;
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| Error::Transport(format!("receive failed: {e}")))?;
        if n == 0 {
            return Err(Error::Transport("captioner closed the connection".into()));
        }
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            return Err(Error::Transport("captioner returned an empty line".into()));
        }
        Ok(line.to_string())
    }
}

impl<R, W> Drop for WireCaptioner<R, W> {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Prompts `client` for `record` and validates the reply, retrying up to
/// `retries` more times on malformed output or transport failure.
pub fn recaption(
    record: &ManifestRecord,
    client: &mut dyn Captioner,
    retries: usize,
) -> Result<TactileCaption> {
    let prompt = build_prompt(record);
    let mut last = None;
    for _ in 0..=retries {
        match client.complete(&prompt) {
            Ok(raw) => match validate_caption(&raw) {
                Ok(c) => return Ok(c),
                Err(e) => last = Some(e),
            },
            Err(e) if e.is_retryable() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
