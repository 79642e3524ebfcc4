//! Flat `key=value` configuration text with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(KeyValues { map })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.replace('-', "_"), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.map.get(key).map(String::as_str) {
            None => Ok(None),
            Some("1" | "true" | "yes" | "on") => Ok(Some(true)),
            Some("0" | "false" | "no" | "off") => Ok(Some(false)),
            Some(v) => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: cannot parse list item {s:?}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Merges `other` over `self`; keys in `other` win.
    pub fn overlay(&mut self, other: &KeyValues) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    pub fn to_text(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let kv = KeyValues::parse("# header\nheads = 6,20,82  # three levels\n\nlr=1e-5\nno-roi=true\n").unwrap();
        assert_eq!(kv.get_list::<usize>("heads").unwrap(), Some(vec![6, 20, 82]));
        assert_eq!(kv.get::<f64>("lr").unwrap(), Some(1e-5));
        assert_eq!(kv.get_bool("no_roi").unwrap(), Some(true));
        assert_eq!(kv.get::<f64>("missing").unwrap(), None);
        assert!(kv.get::<usize>("lr").is_err());
        assert!(KeyValues::parse("novalue\n").is_err());
    }

    #[test]
    fn overlay_prefers_later_values() {
        let mut a = KeyValues::parse("a=1\nb=2").unwrap();
        a.overlay(&KeyValues::parse("b=3\nc=4").unwrap());
        assert_eq!(a.to_text(), "a=1\nb=3\nc=4\n");
    }
}
