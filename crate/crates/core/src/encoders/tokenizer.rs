//! Word-level tokenizer over the closed vocabulary of class names.
//!
//! Ids are assigned as `PAD=0, BOS=1, EOS=2`, followed by every distinct word
//! of the template and the class names in sorted order, so the vocabulary
//! depends only on the word set and never on the order classes are listed.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;

pub const DEFAULT_TEMPLATE: &str = "a photo of a <category>";
const PLACEHOLDER: &str = "<category>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    template: String,
    max_tokens: usize,
    index: HashMap<String, u32>,
}

/// Output of [`tokenize`]: `[BOS, words.., EOS, PAD..]` padded to `max_tokens`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub eos_index: usize,
    pub attention_length: usize,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.to_lowercase())
}

/// Substitute a class name into a prompt template.
pub fn render_prompt(template: &str, class_name: &str) -> String {
    template.replace(PLACEHOLDER, &class_name.to_lowercase())
}

pub fn build_tokenizer(
    class_names: &[impl AsRef<str>],
    template: &str,
    max_tokens: usize,
) -> Result<Vocabulary> {
    if class_names.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let mut set = BTreeSet::new();
    set.extend(words(template).filter(|w| w != PLACEHOLDER));
    for name in class_names {
        set.extend(words(name.as_ref()));
    }
    let mut all = vec![PAD.to_string(), BOS.to_string(), EOS.to_string()];
    all.extend(set);
    let vocab = Vocabulary::from_parts(all, template.to_string(), max_tokens)?;
    for name in class_names {
        let prompt = render_prompt(template, name.as_ref());
        vocab.check_fits(&prompt)?;
    }
    Ok(vocab)
}

impl Vocabulary {
    /// Rebuild a vocabulary from its id-ordered word list (checkpoint load path).
    pub fn from_parts(words: Vec<String>, template: String, max_tokens: usize) -> Result<Self> {
        if words.len() < 3 || words[0] != PAD || words[1] != BOS || words[2] != EOS {
            return Err(Error::Vocab("vocabulary must start with <pad>, <bos>, <eos>".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate word `{w}`")));
            }
        }
        Ok(Self {
            words,
            template,
            max_tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    fn check_fits(&self, text: &str) -> Result<()> {
        let needed = words(text).count() + 2;
        if needed > self.max_tokens {
            return Err(Error::TokenOverflow {
                text: text.to_string(),
                needed,
                limit: self.max_tokens,
            });
        }
        Ok(())
    }

    /// Words of `class_name` (or its rendered prompt) missing from this vocabulary.
    pub fn missing_words(&self, class_name: &str) -> Vec<String> {
        words(&render_prompt(&self.template, class_name))
            .filter(|w| !self.contains(w))
            .collect()
    }

    /// Tokenize the prompt for `class_name` rendered through the template.
    pub fn tokenize_class(&self, class_name: &str) -> Result<TokenSequence> {
        tokenize(&render_prompt(&self.template, class_name), self)
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    vocab.check_fits(text)?;
    let mut ids = Vec::with_capacity(vocab.max_tokens);
    ids.push(BOS_ID);
    for w in words(text) {
        let id = vocab.id(&w).ok_or_else(|| Error::UnknownToken(w.clone()))?;
        ids.push(id);
    }
    let eos_index = ids.len();
    ids.push(EOS_ID);
    ids.resize(vocab.max_tokens, PAD_ID);
    Ok(TokenSequence {
        ids,
        eos_index,
        attention_length: eos_index + 1,
    })
}

impl TokenSequence {
    pub fn validate(&self, max_tokens: usize) -> Result<()> {
        if self.ids.len() != max_tokens || self.eos_index >= max_tokens {
            return Err(Error::shape(format!(
                "token sequence of length {} with eos at {} does not fit max_tokens {max_tokens}",
                self.ids.len(),
                self.eos_index
            )));
        }
        if self.ids[0] != BOS_ID || self.ids[self.eos_index] != EOS_ID {
            return Err(Error::shape("token sequence lacks BOS/EOS markers"));
        }
        if self.ids[self.eos_index + 1..].iter().any(|&id| id != PAD_ID) {
            return Err(Error::shape("non-PAD id after EOS"));
        }
        Ok(())
    }
}
