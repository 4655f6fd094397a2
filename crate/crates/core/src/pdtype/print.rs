//! Canonical printer for type declarations. The output re-parses to an
//! equal declaration, and structurally equal declarations print to
//! byte-identical text.

use super::{Grant, TypeDecl};

pub fn canonical_print(decl: &TypeDecl) -> String {
    let mut out = String::new();
    out.push_str(&format!("type {} {{\n", decl.name));

    out.push_str("  fields {\n");
    for (i, f) in decl.fields.iter().enumerate() {
        let sep = if i + 1 == decl.fields.len() { "" } else { "," };
        out.push_str(&format!("    {}: {}{}\n", f.name, f.ty.keyword(), sep));
    }
    out.push_str("  };\n");

    for view in &decl.views {
        out.push_str(&format!("  view {} {{\n", view.name));
        let n = view.members.len();
        for (i, member) in view.members.iter().enumerate() {
            let sep = if i + 1 == n { "" } else { "," };
            out.push_str(&format!("    {member}{sep}\n"));
        }
        out.push_str("  };\n");
    }

    if !decl.default_consent.is_empty() {
        out.push_str("  consent {\n");
        let n = decl.default_consent.len();
        for (i, (purpose, grant)) in decl.default_consent.iter().enumerate() {
            let sep = if i + 1 == n { "" } else { "," };
            let grant = match grant {
                Grant::All => "all",
                Grant::None => "none",
                Grant::View(v) => v.as_str(),
            };
            out.push_str(&format!("    {purpose}: {grant}{sep}\n"));
        }
        out.push_str("  };\n");
    }

    if !decl.collection.is_empty() {
        out.push_str("  collection {\n");
        let n = decl.collection.len();
        for (i, (source, descriptor)) in decl.collection.iter().enumerate() {
            let sep = if i + 1 == n { "" } else { "," };
            out.push_str(&format!("    {source}: {descriptor}{sep}\n"));
        }
        out.push_str("  };\n");
    }

    out.push_str(&format!("  origin: {};\n", decl.origin.keyword()));
    out.push_str(&format!("  age: {};\n", decl.ttl));
    out.push_str(&format!("  sensitivity: {};\n", decl.sensitivity.keyword()));
    out.push_str("}\n");
    out
}
