//! Routing keys and binding patterns.
//!
//! Keys are dot-separated, non-empty segments. A pattern matches segment by
//! segment exactly, except that a final `#` segment matches zero or more
//! remaining segments. `#` is only allowed as the last segment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopicError {
    #[error("routing key must not be empty")]
    Empty,
    #[error("empty segment in {0:?}")]
    EmptySegment(String),
    #[error("'#' may only appear as the last segment of {0:?}")]
    MisplacedWildcard(String),
    #[error("'#' is not allowed in routing key {0:?}")]
    WildcardInKey(String),
}

pub fn validate_routing_key(key: &str) -> Result<(), TopicError> {
    if key.is_empty() {
        return Err(TopicError::Empty);
    }
    for seg in key.split('.') {
        if seg.is_empty() {
            return Err(TopicError::EmptySegment(key.to_string()));
        }
        if seg == "#" {
            return Err(TopicError::WildcardInKey(key.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoutingPattern {
    raw: String,
    /// Exact-match prefix segments; the wildcard, if any, is not included.
    exact_len: usize,
    wildcard: bool,
}

impl RoutingPattern {
    pub fn parse(raw: &str) -> Result<Self, TopicError> {
        if raw.is_empty() {
            return Err(TopicError::Empty);
        }
        let segments: Vec<&str> = raw.split('.').collect();
        let last = segments.len() - 1;
        for (i, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(TopicError::EmptySegment(raw.to_string()));
            }
            if *seg == "#" && i != last {
                return Err(TopicError::MisplacedWildcard(raw.to_string()));
            }
        }
        let wildcard = segments[last] == "#";
        Ok(Self {
            raw: raw.to_string(),
            exact_len: if wildcard { last } else { segments.len() },
            wildcard,
        })
    }

    /// Pattern matching every key.
    pub fn all() -> Self {
        Self::parse("#").expect("valid")
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn is_wildcard(&self) -> bool {
        self.wildcard
    }

    fn exact_segments(&self) -> impl Iterator<Item = &str> {
        self.raw.split('.').take(self.exact_len)
    }

    pub fn matches(&self, routing_key: &str) -> bool {
        let mut key = routing_key.split('.');
        for expected in self.exact_segments() {
            match key.next() {
                Some(seg) if seg == expected => {}
                _ => return false,
            }
        }
        self.wildcard || key.next().is_none()
    }

    /// True when every key matched by `other` is also matched by `self`.
    pub fn covers(&self, other: &RoutingPattern) -> bool {
        if self.exact_len > other.exact_len {
            return false;
        }
        if !self.wildcard && (other.wildcard || other.exact_len != self.exact_len) {
            return false;
        }
        self.exact_segments()
            .zip(other.exact_segments())
            .all(|(a, b)| a == b)
    }
}

impl fmt::Display for RoutingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for RoutingPattern {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for RoutingPattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for RoutingPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}
