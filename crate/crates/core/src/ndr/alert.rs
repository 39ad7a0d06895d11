//! Detection alerts and their CEF wire encoding.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dissect::ProtocolLogRecord;
use crate::time::{Calendar, SimTime};

pub const SIG_FDI: &str = "AMI-FDI-001";
pub const SIG_DDOS: &str = "AMI-DDOS-001";

pub const CEF_VENDOR: &str = "PHOENI2X";
pub const CEF_PRODUCT: &str = "AMI-NDR";
pub const CEF_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    Meter,
    Headend,
    Both,
}

impl DeviceClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            DeviceClass::Meter => "meter",
            DeviceClass::Headend => "headend",
            DeviceClass::Both => "both",
        }
    }
}

impl std::fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub signature_id: String,
    pub name: String,
    /// Clamped to 0..=10 on construction.
    pub severity: u8,
    pub victim_ip: Ipv4Addr,
    pub offender_ip: Ipv4Addr,
    /// Every offending source; equals `[offender_ip]` for single offenders.
    pub offender_ips: Vec<Ipv4Addr>,
    pub device_class: DeviceClass,
    pub detection_time: SimTime,
    pub summary: String,
    /// Offending records backing the detection.
    pub evidence: Vec<ProtocolLogRecord>,
}

impl Alert {
    pub fn clamp_severity(raw: i64) -> u8 {
        raw.clamp(0, 10) as u8
    }
}

fn escape_header(s: &str) -> String {
    s.replace('\\', "\\\\").replace('|', "\\|")
}

fn escape_extension(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('=', "\\=")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

/// Renders the alert as exactly one CEF line:
/// `CEF:0|PHOENI2X|AMI-NDR|1.0|<signature>|<name>|<severity>|<extension>`
/// with `src`, `dst`, `cs1Label/cs1` (device class) leading the extension.
pub fn emit_cef(alert: &Alert, calendar: &Calendar) -> String {
    let mut ext: Vec<String> = Vec::new();
    ext.push(format!("src={}", alert.offender_ip));
    ext.push(format!("dst={}", alert.victim_ip));
    ext.push("cs1Label=deviceClass".to_string());
    ext.push(format!("cs1={}", alert.device_class));
    ext.push(format!("externalId={}", escape_extension(&alert.alert_id)));
    ext.push(format!("rt={}", calendar.epoch_millis(alert.detection_time)));
    ext.push(format!("cnt={}", alert.evidence.len()));
    ext.push("cs2Label=offenderIps".to_string());
    ext.push(format!(
        "cs2={}",
        alert
            .offender_ips
            .iter()
            .map(Ipv4Addr::to_string)
            .collect::<Vec<_>>()
            .join(",")
    ));
    ext.push(format!("msg={}", escape_extension(&alert.summary)));

    format!(
        "CEF:0|{}|{}|{}|{}|{}|{}|{}",
        escape_header(CEF_VENDOR),
        escape_header(CEF_PRODUCT),
        escape_header(CEF_VERSION),
        escape_header(&alert.signature_id),
        escape_header(&alert.name),
        alert.severity,
        ext.join(" ")
    )
}

/// A CEF line parsed back into its header fields and extension map. This is
/// what the alert listener consumes to seed playbook bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct CefAlert {
    pub version: String,
    pub vendor: String,
    pub product: String,
    pub device_version: String,
    pub signature_id: String,
    pub name: String,
    pub severity: u8,
    pub extensions: BTreeMap<String, String>,
}

impl CefAlert {
    pub fn extension(&self, key: &str) -> Option<&str> {
        self.extensions.get(key).map(String::as_str)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CefParseError {
    #[error("CEF line must start with `CEF:`")]
    MissingPrefix,
    #[error("CEF header needs 7 pipe-separated fields, found {0}")]
    TruncatedHeader(usize),
    #[error("CEF severity `{0}` is not an integer in 0..=10")]
    BadSeverity(String),
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Splits a CEF line on unescaped pipes into the 7 header fields plus the
/// extension remainder.
fn split_header(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut escaped = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if fields.len() == 7 {
            // Everything after the seventh pipe is the extension.
            let mut rest = String::new();
            rest.push(c);
            rest.extend(chars);
            fields.push(rest);
            return fields;
        }
        if escaped {
            current.push('\\');
            current.push(c);
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '|' {
            fields.push(std::mem::take(&mut current));
        } else {
            current.push(c);
        }
    }
    if escaped {
        current.push('\\');
    }
    fields.push(current);
    fields
}

pub fn parse_cef(line: &str) -> Result<CefAlert, CefParseError> {
    let rest = line
        .strip_prefix("CEF:")
        .ok_or(CefParseError::MissingPrefix)?;
    let fields = split_header(rest);
    if fields.len() < 8 {
        return Err(CefParseError::TruncatedHeader(fields.len()));
    }
    let severity: u8 = fields[6]
        .parse()
        .ok()
        .filter(|s| *s <= 10)
        .ok_or_else(|| CefParseError::BadSeverity(fields[6].clone()))?;

    Ok(CefAlert {
        version: fields[0].clone(),
        vendor: unescape(&fields[1]),
        product: unescape(&fields[2]),
        device_version: unescape(&fields[3]),
        signature_id: unescape(&fields[4]),
        name: unescape(&fields[5]),
        severity,
        extensions: parse_extensions(&fields[7]),
    })
}

/// Extension fields are `key=value` pairs separated by spaces; values may
/// contain spaces, so a new pair starts only where a ` token=` boundary with
/// an unescaped `=` appears.
fn parse_extensions(ext: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut key: Option<String> = None;
    let mut value = String::new();
    let mut token = String::new();
    let mut escaped = false;

    let flush_token_to_value = |value: &mut String, token: &mut String| {
        if !value.is_empty() || !token.is_empty() {
            if !value.is_empty() {
                value.push(' ');
            }
            value.push_str(token);
            token.clear();
        }
    };

    for c in ext.chars() {
        if escaped {
            token.push('\\');
            token.push(c);
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '=' => {
                // The current token is the next key; what accumulated before
                // it belongs to the previous value.
                if let Some(k) = key.take() {
                    out.insert(k, unescape(&value));
                    value.clear();
                }
                key = Some(std::mem::take(&mut token));
            }
            ' ' => flush_token_to_value(&mut value, &mut token),
            _ => token.push(c),
        }
    }
    if escaped {
        token.push('\\');
    }
    flush_token_to_value(&mut value, &mut token);
    if let Some(k) = key {
        out.insert(k, unescape(&value));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alert() -> Alert {
        Alert {
            alert_id: "ALERT-0001".to_string(),
            signature_id: SIG_FDI.to_string(),
            name: "AMI False Data Injection".to_string(),
            severity: 8,
            victim_ip: Ipv4Addr::new(10, 0, 0, 7),
            offender_ip: Ipv4Addr::new(10, 0, 0, 7),
            offender_ips: vec![Ipv4Addr::new(10, 0, 0, 7)],
            device_class: DeviceClass::Meter,
            detection_time: SimTime::from_secs(9615),
            summary: "sustained apparent-power deviation on meter-07".to_string(),
            evidence: Vec::new(),
        }
    }

    #[test]
    fn emits_expected_prefix_and_extension_order() {
        let line = emit_cef(&alert(), &Calendar::default());
        assert!(line.starts_with("CEF:0|PHOENI2X|AMI-NDR|1.0|AMI-FDI-001|"));
        let ext = line.split('|').nth(7).unwrap();
        assert!(ext.starts_with("src=10.0.0.7 dst=10.0.0.7 cs1Label=deviceClass cs1=meter"));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn severity_is_clamped() {
        assert_eq!(Alert::clamp_severity(15), 10);
        assert_eq!(Alert::clamp_severity(-3), 0);
        assert_eq!(Alert::clamp_severity(7), 7);
    }

    #[test]
    fn pipes_in_header_values_are_escaped() {
        let mut a = alert();
        a.name = "weird|name".to_string();
        let line = emit_cef(&a, &Calendar::default());
        assert!(line.contains("weird\\|name"));
        let parsed = parse_cef(&line).unwrap();
        assert_eq!(parsed.name, "weird|name");
    }

    #[test]
    fn equals_in_extension_values_are_escaped() {
        let mut a = alert();
        a.summary = "k=v gotcha".to_string();
        let line = emit_cef(&a, &Calendar::default());
        assert!(line.contains("msg=k\\=v gotcha"));
        let parsed = parse_cef(&line).unwrap();
        assert_eq!(parsed.extension("msg"), Some("k=v gotcha"));
    }

    #[test]
    fn parse_recovers_emitted_fields() {
        let a = alert();
        let cal = Calendar::default();
        let parsed = parse_cef(&emit_cef(&a, &cal)).unwrap();
        assert_eq!(parsed.signature_id, SIG_FDI);
        assert_eq!(parsed.severity, 8);
        assert_eq!(parsed.extension("src"), Some("10.0.0.7"));
        assert_eq!(parsed.extension("dst"), Some("10.0.0.7"));
        assert_eq!(parsed.extension("cs1"), Some("meter"));
        assert_eq!(parsed.extension("externalId"), Some("ALERT-0001"));
        assert_eq!(
            parsed.extension("rt"),
            Some(cal.epoch_millis(a.detection_time).to_string().as_str())
        );
    }

    #[test]
    fn parse_rejects_garbage() {
        assert_eq!(parse_cef("not a cef line"), Err(CefParseError::MissingPrefix));
        assert!(matches!(
            parse_cef("CEF:0|v|p"),
            Err(CefParseError::TruncatedHeader(_))
        ));
        assert!(matches!(
            parse_cef("CEF:0|v|p|1.0|sig|name|eleven|src=1.2.3.4"),
            Err(CefParseError::BadSeverity(_))
        ));
    }
}
