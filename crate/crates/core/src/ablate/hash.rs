use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::AblateError;

/// First 10 lowercase hex characters of SHA-256 over the UTF-8 name.
pub fn hash_gene_name(name: &str) -> Result<String, AblateError> {
    if name.is_empty() {
        return Err(AblateError::EmptyName);
    }
    Ok(truncated_hex(name))
}

fn truncated_hex(name: &str) -> String {
    let digest = Sha256::digest(name.as_bytes());
    let mut out = String::with_capacity(10);
    for b in &digest[..5] {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hashes every distinct name; fails on the first truncated-digest collision.
pub fn hash_vocabulary<'a, I>(names: I) -> Result<HashMap<String, String>, AblateError>
where
    I: IntoIterator<Item = &'a str>,
{
    injective_map(names, hash_gene_name)
}

fn injective_map<'a, I, F>(names: I, hasher: F) -> Result<HashMap<String, String>, AblateError>
where
    I: IntoIterator<Item = &'a str>,
    F: Fn(&str) -> Result<String, AblateError>,
{
    let mut forward: HashMap<String, String> = HashMap::new();
    let mut reverse: HashMap<String, String> = HashMap::new();
    for name in names {
        if forward.contains_key(name) {
            continue;
        }
        let token = hasher(name)?;
        if let Some(prev) = reverse.get(&token) {
            let (first, second) = if prev.as_str() < name { (prev.clone(), name.to_owned()) } else { (name.to_owned(), prev.clone()) };
            return Err(AblateError::HashCollision { first, second, token });
        }
        reverse.insert(token.clone(), name.to_owned());
        forward.insert(name.to_owned(), token);
    }
    Ok(forward)
}
