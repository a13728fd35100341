use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const SEP: TokenId = 1;
pub const PRONOUN: TokenId = 2;
pub const COREF: TokenId = 3;

const RESERVED: [&str; 4] = ["<pad>", "<sep>", "it", "that"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Reserved,
    Topic,
    Facet,
    Function,
}

impl TokenClass {
    /// Topic and facet tokens carry the information need.
    pub fn is_content(self) -> bool {
        matches!(self, TokenClass::Topic | TokenClass::Facet)
    }
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenClass::Reserved => "reserved",
            TokenClass::Topic => "topic",
            TokenClass::Facet => "facet",
            TokenClass::Function => "function",
        })
    }
}

impl FromStr for TokenClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "reserved" => TokenClass::Reserved,
            "topic" => TokenClass::Topic,
            "facet" => TokenClass::Facet,
            "function" => TokenClass::Function,
            other => return Err(invalid!("unknown token class {:?}", other)),
        })
    }
}

/// Closed vocabulary with fixed reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    classes: Vec<TokenClass>,
    ids: HashMap<String, TokenId>,
}

/// Output of [`Vocab::tokenize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<TokenId>,
    pub unknown: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::with_reserved()
    }
}

impl Vocab {
    /// Vocabulary holding only PAD, SEP, PRONOUN and COREF.
    pub fn with_reserved() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            classes: Vec::new(),
            ids: HashMap::new(),
        };
        for t in RESERVED {
            v.add(t, TokenClass::Reserved).expect("reserved tokens are distinct");
        }
        v
    }

    pub fn add(&mut self, token: &str, class: TokenClass) -> Result<TokenId> {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(invalid!("token {:?} is empty or contains whitespace", token));
        }
        if token.chars().any(char::is_uppercase) {
            return Err(invalid!("token {:?} is not lowercase", token));
        }
        if self.ids.contains_key(token) {
            return Err(invalid!("duplicate token {:?}", token));
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.classes.push(class);
        self.ids.insert(token.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn class(&self, id: TokenId) -> Option<TokenClass> {
        self.classes.get(id as usize).copied()
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        self.class(id).is_some_and(TokenClass::is_content)
    }

    /// Lowercases, splits on whitespace, and drops tokens outside the vocabulary.
    pub fn tokenize(&self, text: &str) -> Tokenized {
        let mut ids = Vec::new();
        let mut unknown = 0;
        for w in text.split_whitespace() {
            match self.ids.get(w.to_lowercase().as_str()) {
                Some(&id) => ids.push(id),
                None => unknown += 1,
            }
        }
        Tokenized { ids, unknown }
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(
                self.token(id)
                    .ok_or_else(|| invalid!("token id {} outside vocabulary of {}", id, self.len()))?,
            );
        }
        Ok(out)
    }

    /// `id<TAB>token<TAB>class` lines in id order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.classes).enumerate() {
            s.push_str(&format!("{i}\t{t}\t{c}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str, path: &str) -> Result<Self> {
        let mut v = Vocab {
            tokens: Vec::new(),
            classes: Vec::new(),
            ids: HashMap::new(),
        };
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, n + 1, "expected id<TAB>token<TAB>class"));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, n + 1, format!("bad id {:?}", fields[0])))?;
            if id != v.len() {
                return Err(Error::parse(
                    path,
                    n + 1,
                    format!("ids must be dense, expected {}", v.len()),
                ));
            }
            let class: TokenClass = fields[2]
                .parse()
                .map_err(|e: Error| Error::parse(path, n + 1, e.to_string()))?;
            v.add(fields[1], class)
                .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        }
        for (i, t) in RESERVED.iter().enumerate() {
            if v.tokens.get(i).map(String::as_str) != Some(*t) || v.classes[i] != TokenClass::Reserved {
                return Err(Error::parse(path, i + 1, format!("reserved id {i} must be {t:?}")));
            }
        }
        Ok(v)
    }
}

/// Free-function form of [`Vocab::tokenize`].
pub fn tokenize(text: &str, vocab: &Vocab) -> Tokenized {
    vocab.tokenize(text)
}
