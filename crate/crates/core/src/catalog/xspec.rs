//! XML codec for lower- and upper-level XSpec documents.
//!
//! Serialization is canonical: fixed attribute order, two-space indent, LF
//! line endings and a trailing newline, so equal specs always produce equal
//! bytes and therefore equal fingerprints.

use std::collections::BTreeMap;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    ColumnSpec, LowerSpec, RelationshipSpec, TableSpec, UpperSpec, UpperSpecEntry,
};
use crate::error::{Error, Result};

#[derive(Debug)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Element>,
}

impl Element {
    fn attr(&self, key: &str) -> Result<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| malformed(format!("<{}> is missing attribute `{key}`", self.name)))
    }

    fn expect_attrs(&self, allowed: &[&str]) -> Result<()> {
        match self.attrs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(malformed(format!("<{}> has unexpected attribute `{k}`", self.name))),
            None => Ok(()),
        }
    }

    fn expect_leaf(&self) -> Result<()> {
        if self.children.is_empty() {
            Ok(())
        } else {
            Err(malformed(format!("<{}> must not have children", self.name)))
        }
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedSpec(msg.into())
}

fn element_of(start: &BytesStart<'_>) -> Result<Element> {
    let name = String::from_utf8(start.name().as_ref().to_vec()).map_err(|e| malformed(e.to_string()))?;
    let mut attrs = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| malformed(e.to_string()))?;
        let key = String::from_utf8(attr.key.as_ref().to_vec()).map_err(|e| malformed(e.to_string()))?;
        let value = attr.unescape_value().map_err(|e| malformed(e.to_string()))?.into_owned();
        if attrs.iter().any(|(k, _)| *k == key) {
            return Err(malformed(format!("duplicate attribute `{key}`")));
        }
        attrs.push((key, value));
    }
    Ok(Element { name, attrs, children: Vec::new() })
}

fn parse_dom(bytes: &[u8]) -> Result<Element> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(format!("not UTF-8: {e}")))?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<Element> = Vec::new();
    let mut root = None;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| malformed(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(s) => stack.push(element_of(&s)?),
            Event::Empty(s) => {
                let el = element_of(&s)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(malformed("more than one root element")),
                }
            }
            Event::End(_) => {
                let el = stack.pop().ok_or_else(|| malformed("unbalanced closing tag"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(malformed("more than one root element")),
                }
            }
            Event::Text(t) => {
                if !t.iter().all(u8::is_ascii_whitespace) {
                    return Err(malformed("unexpected text content"));
                }
            }
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) => {}
            _ => return Err(malformed("unsupported XML construct")),
        }
    }
    if !stack.is_empty() {
        return Err(malformed("unclosed element"));
    }
    root.ok_or_else(|| malformed("empty document"))
}

fn expect_version(root: &Element) -> Result<()> {
    match root.attr("version")? {
        "1" => Ok(()),
        v => Err(malformed(format!("unsupported version `{v}`"))),
    }
}

fn split_list(s: &str) -> Vec<String> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(',').map(|c| c.trim().to_string()).collect()
    }
}

/// Parses and validates a lower-level spec.
pub fn parse_lower_spec(bytes: &[u8]) -> Result<LowerSpec> {
    let root = parse_dom(bytes)?;
    if root.name != "xspec" {
        return Err(malformed(format!("expected <xspec>, found <{}>", root.name)));
    }
    root.expect_attrs(&["version"])?;
    expect_version(&root)?;
    let [db] = root.children.as_slice() else {
        return Err(malformed("<xspec> must contain exactly one <database>"));
    };
    if db.name != "database" {
        return Err(malformed(format!("expected <database>, found <{}>", db.name)));
    }
    db.expect_attrs(&["name"])?;
    let mut spec = LowerSpec::new(db.attr("name")?);
    for child in &db.children {
        match child.name.as_str() {
            "table" => spec.tables.push(parse_table(child)?),
            "relationship" => {
                child.expect_leaf()?;
                child.expect_attrs(&["fromTable", "fromColumns", "toTable", "toColumns"])?;
                spec.relationships.push(RelationshipSpec {
                    from_table: child.attr("fromTable")?.to_string(),
                    from_columns: split_list(child.attr("fromColumns")?),
                    to_table: child.attr("toTable")?.to_string(),
                    to_columns: split_list(child.attr("toColumns")?),
                });
            }
            other => return Err(malformed(format!("unexpected <{other}> in <database>"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_table(el: &Element) -> Result<TableSpec> {
    el.expect_attrs(&["name", "logical"])?;
    let mut table = TableSpec {
        physical_name: el.attr("name")?.to_string(),
        logical_name: el.attr("logical")?.to_string(),
        columns: Vec::new(),
        key_columns: Vec::new(),
    };
    let mut saw_key = false;
    for child in &el.children {
        child.expect_leaf()?;
        match child.name.as_str() {
            "column" if !saw_key => {
                child.expect_attrs(&["name", "logical", "type", "nullable"])?;
                let nullable = match child.attr("nullable")? {
                    "true" => true,
                    "false" => false,
                    v => return Err(malformed(format!("nullable must be true or false, got `{v}`"))),
                };
                table.columns.push(ColumnSpec {
                    physical_name: child.attr("name")?.to_string(),
                    logical_name: child.attr("logical")?.to_string(),
                    data_type: child.attr("type")?.parse()?,
                    nullable,
                });
            }
            "key" if !saw_key => {
                child.expect_attrs(&["columns"])?;
                table.key_columns = split_list(child.attr("columns")?);
                saw_key = true;
            }
            other => {
                return Err(malformed(format!("unexpected <{other}> in table `{}`", table.logical_name)))
            }
        }
    }
    Ok(table)
}

fn escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

pub fn serialize_lower_spec(spec: &LowerSpec) -> String {
    let mut out = String::new();
    out.push_str("<xspec version=\"1\">\n");
    out.push_str(&format!("  <database name=\"{}\">\n", escape(&spec.database)));
    for t in &spec.tables {
        out.push_str(&format!(
            "    <table name=\"{}\" logical=\"{}\">\n",
            escape(&t.physical_name),
            escape(&t.logical_name)
        ));
        for c in &t.columns {
            out.push_str(&format!(
                "      <column name=\"{}\" logical=\"{}\" type=\"{}\" nullable=\"{}\"/>\n",
                escape(&c.physical_name),
                escape(&c.logical_name),
                c.data_type,
                c.nullable
            ));
        }
        if !t.key_columns.is_empty() {
            out.push_str(&format!("      <key columns=\"{}\"/>\n", escape(&t.key_columns.join(","))));
        }
        out.push_str("    </table>\n");
    }
    for r in &spec.relationships {
        out.push_str(&format!(
            "    <relationship fromTable=\"{}\" fromColumns=\"{}\" toTable=\"{}\" toColumns=\"{}\"/>\n",
            escape(&r.from_table),
            escape(&r.from_columns.join(",")),
            escape(&r.to_table),
            escape(&r.to_columns.join(","))
        ));
    }
    out.push_str("  </database>\n");
    out.push_str("</xspec>\n");
    out
}

/// Parses an upper-level spec without resolving its lower-spec references.
pub fn parse_upper_spec_only(bytes: &[u8]) -> Result<UpperSpec> {
    let root = parse_dom(bytes)?;
    if root.name != "xspec-federation" {
        return Err(malformed(format!("expected <xspec-federation>, found <{}>", root.name)));
    }
    root.expect_attrs(&["version"])?;
    expect_version(&root)?;
    let mut upper = UpperSpec::default();
    for child in &root.children {
        if child.name != "source" {
            return Err(malformed(format!("unexpected <{}> in <xspec-federation>", child.name)));
        }
        child.expect_leaf()?;
        child.expect_attrs(&["id", "url", "driver", "spec"])?;
        upper.entries.push(UpperSpecEntry {
            source_id: child.attr("id")?.to_string(),
            url: child.attr("url")?.to_string(),
            driver_name: child.attr("driver")?.to_string(),
            lower_spec_ref: child.attr("spec")?.to_string(),
        });
    }
    upper.validate()?;
    Ok(upper)
}

/// Parses an upper-level spec and every lower spec it references.
/// `resolve` maps a lower-spec reference to the document bytes.
pub fn parse_upper_spec<F>(bytes: &[u8], mut resolve: F) -> Result<(UpperSpec, BTreeMap<String, LowerSpec>)>
where
    F: FnMut(&str) -> Option<Vec<u8>>,
{
    let upper = parse_upper_spec_only(bytes)?;
    let mut lowers = BTreeMap::new();
    for e in &upper.entries {
        let doc = resolve(&e.lower_spec_ref).ok_or_else(|| Error::UnresolvableRef(e.lower_spec_ref.clone()))?;
        lowers.insert(e.source_id.clone(), parse_lower_spec(&doc)?);
    }
    Ok((upper, lowers))
}

pub fn serialize_upper_spec(spec: &UpperSpec) -> String {
    let mut out = String::from("<xspec-federation version=\"1\">\n");
    for e in &spec.entries {
        out.push_str(&format!(
            "  <source id=\"{}\" url=\"{}\" driver=\"{}\" spec=\"{}\"/>\n",
            escape(&e.source_id),
            escape(&e.url),
            escape(&e.driver_name),
            escape(&e.lower_spec_ref)
        ));
    }
    out.push_str("</xspec-federation>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::DataType;

    const ONE_TABLE: &str = r#"<xspec version="1">
  <database name="cern">
    <table name="EVT" logical="events">
      <column name="EVT_ID" logical="event_id" type="integer" nullable="false"/>
      <column name="E" logical="energy" type="real" nullable="true"/>
    </table>
  </database>
</xspec>
"#;

    #[test]
    fn smallest_valid_spec() {
        let spec = parse_lower_spec(ONE_TABLE.as_bytes()).unwrap();
        assert_eq!(spec.database, "cern");
        assert_eq!(spec.tables.len(), 1);
        assert_eq!(spec.tables[0].columns.len(), 2);
        assert_eq!(serialize_lower_spec(&spec), ONE_TABLE);
    }

    #[test]
    fn two_tables_with_relationship() {
        let doc = r#"<xspec version="1"><database name="db">
            <table name="events" logical="events">
              <column name="id" logical="id" type="integer" nullable="false"/>
              <column name="run_id" logical="run_id" type="integer" nullable="true"/>
              <key columns="id"/>
            </table>
            <table name="RUNS" logical="runs">
              <column name="RID" logical="id" type="integer" nullable="false"/>
              <column name="T0" logical="started" type="timestamp" nullable="true"/>
            </table>
            <relationship fromTable="events" fromColumns="run_id" toTable="runs" toColumns="id"/>
          </database></xspec>"#;
        let expected = LowerSpec {
            database: "db".into(),
            tables: vec![
                TableSpec {
                    physical_name: "events".into(),
                    logical_name: "events".into(),
                    columns: vec![
                        ColumnSpec {
                            physical_name: "id".into(),
                            logical_name: "id".into(),
                            data_type: DataType::Integer,
                            nullable: false,
                        },
                        ColumnSpec::new("run_id", DataType::Integer),
                    ],
                    key_columns: vec!["id".into()],
                },
                TableSpec {
                    physical_name: "RUNS".into(),
                    logical_name: "runs".into(),
                    columns: vec![
                        ColumnSpec {
                            physical_name: "RID".into(),
                            logical_name: "id".into(),
                            data_type: DataType::Integer,
                            nullable: false,
                        },
                        ColumnSpec {
                            physical_name: "T0".into(),
                            logical_name: "started".into(),
                            data_type: DataType::Timestamp,
                            nullable: true,
                        },
                    ],
                    key_columns: vec![],
                },
            ],
            relationships: vec![RelationshipSpec {
                from_table: "events".into(),
                from_columns: vec!["run_id".into()],
                to_table: "runs".into(),
                to_columns: vec!["id".into()],
            }],
        };
        let spec = parse_lower_spec(doc.as_bytes()).unwrap();
        assert_eq!(spec, expected);
        let text = serialize_lower_spec(&spec);
        assert_eq!(text.matches("<relationship ").count(), 1);
        assert_eq!(parse_lower_spec(text.as_bytes()).unwrap(), expected);
    }

    #[test]
    fn duplicate_table_logical_name() {
        let doc = r#"<xspec version="1"><database name="db">
            <table name="A" logical="events"><column name="x" logical="x" type="integer" nullable="true"/></table>
            <table name="B" logical="events"><column name="x" logical="x" type="integer" nullable="true"/></table>
          </database></xspec>"#;
        assert!(matches!(parse_lower_spec(doc.as_bytes()), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn dangling_relationship() {
        let doc = r#"<xspec version="1"><database name="db">
            <table name="A" logical="a"><column name="x" logical="x" type="integer" nullable="true"/></table>
            <relationship fromTable="a" fromColumns="x" toTable="ghost" toColumns="y"/>
          </database></xspec>"#;
        assert!(matches!(parse_lower_spec(doc.as_bytes()), Err(Error::DanglingRelationship(_))));
    }

    #[test]
    fn malformed_documents() {
        for doc in [
            "",
            "<xspec version=\"1\">",
            "<xspec version=\"2\"><database name=\"d\"></database></xspec>",
            "<xspec version=\"1\"><database name=\"d\">text</database></xspec>",
            "<xspec version=\"1\"><database name=\"d\"><table name=\"t\" logical=\"t\"><column name=\"c\" logical=\"c\" type=\"blob\" nullable=\"true\"/></table></database></xspec>",
            "<other version=\"1\"/>",
        ] {
            assert!(matches!(parse_lower_spec(doc.as_bytes()), Err(Error::MalformedSpec(_))), "{doc}");
        }
    }

    #[test]
    fn attribute_values_are_escaped() {
        let mut spec = LowerSpec::new("d");
        spec.tables.push(TableSpec::new("a&b<\"c\">", vec![ColumnSpec::new("x", DataType::Text)]));
        let text = serialize_lower_spec(&spec);
        assert!(text.contains("a&amp;b&lt;&quot;c&quot;&gt;"));
        assert_eq!(parse_lower_spec(text.as_bytes()).unwrap(), spec);
    }

    #[test]
    fn upper_spec_resolution() {
        let empty = "<xspec-federation version=\"1\">\n</xspec-federation>\n";
        let (upper, lowers) = parse_upper_spec(empty.as_bytes(), |_| None).unwrap();
        assert!(upper.entries.is_empty() && lowers.is_empty());
        assert_eq!(serialize_upper_spec(&upper), empty);

        let doc = r#"<xspec-federation version="1">
  <source id="cern" url="mem:cern" driver="reference" spec="cern.xml"/>
  <source id="caltech" url="mem:caltech" driver="reference" spec="caltech.xml"/>
</xspec-federation>
"#;
        let other = ONE_TABLE.replace("cern", "caltech");
        let (upper, lowers) = parse_upper_spec(doc.as_bytes(), |r| match r {
            "cern.xml" => Some(ONE_TABLE.as_bytes().to_vec()),
            "caltech.xml" => Some(other.as_bytes().to_vec()),
            _ => None,
        })
        .unwrap();
        assert_eq!(upper.entries.len(), 2);
        assert_eq!(lowers.len(), 2);
        assert_eq!(lowers["caltech"].database, "caltech");
        assert_eq!(serialize_upper_spec(&upper), doc);

        let err = parse_upper_spec(doc.as_bytes(), |r| (r == "cern.xml").then(|| ONE_TABLE.as_bytes().to_vec()));
        assert_eq!(err.unwrap_err(), Error::UnresolvableRef("caltech.xml".into()));

        let dup = doc.replace("id=\"caltech\"", "id=\"cern\"");
        assert!(matches!(parse_upper_spec_only(dup.as_bytes()), Err(Error::DuplicateSourceId(_))));
    }
}
