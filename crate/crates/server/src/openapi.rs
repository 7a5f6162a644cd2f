//! OpenAPI 3.0 document generated from the route table.

use serde_json::{json, Map, Value};

use crate::api::{Access, RouteSpec, ROUTES};

fn path_parameters(path: &str) -> Vec<Value> {
    path.split('/')
        .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
        .map(|name| {
            json!({
                "name": name,
                "in": "path",
                "required": true,
                "schema": {"type": "string"}
            })
        })
        .collect()
}

fn operation_id(route: &RouteSpec) -> String {
    let slug: Vec<String> = route
        .path
        .split(['/', '.'])
        .filter(|s| !s.is_empty())
        .map(|s| match s.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            Some(param) => format!("by_{param}"),
            None => s.to_owned(),
        })
        .collect();
    format!("{}_{}", route.method, slug.join("_"))
}

fn operation(route: &RouteSpec) -> Value {
    let mut op = Map::new();
    op.insert("summary".into(), route.summary.into());
    op.insert("operationId".into(), operation_id(route).into());
    let params = path_parameters(route.path);
    if !params.is_empty() {
        op.insert("parameters".into(), params.into());
    }
    let security = match route.access {
        Access::Public => None,
        Access::Optional => Some(json!([{}, {"bearer": []}])),
        Access::Basic => Some(json!([{"basic": []}])),
        Access::Bearer | Access::Admin => Some(json!([{"bearer": []}])),
    };
    if let Some(security) = security {
        op.insert("security".into(), security);
    }
    if matches!(route.method, "post" | "patch") {
        let content = if route.path == "/api/deliveries/" {
            json!({"multipart/form-data": {"schema": {
                "type": "object",
                "required": ["payload"],
                "properties": {
                    "payload": {"type": "string", "description": "JSON document: item, source, destination, receiver"},
                    "picture": {"type": "string", "format": "binary", "description": "JPEG or PNG, at most 5 MiB"}
                }
            }}})
        } else {
            json!({"application/json": {"schema": {"type": "object"}}})
        };
        op.insert("requestBody".into(), json!({"required": true, "content": content}));
    }
    let ok = match route.status {
        101 => json!({"description": "Switching to the websocket protocol"}),
        204 => json!({"description": "Done"}),
        _ => json!({"description": "Success", "content": {"application/json": {"schema": {}}}}),
    };
    let error = json!({
        "description": "Error",
        "content": {"application/json": {"schema": {"$ref": "#/components/schemas/ErrorEnvelope"}}}
    });
    op.insert(
        "responses".into(),
        json!({ route.status.to_string(): ok, "default": error }),
    );
    if route.access == Access::Admin {
        op.insert("tags".into(), json!(["admin"]));
    }
    Value::Object(op)
}

pub fn error_envelope_schema() -> Value {
    json!({
        "type": "object",
        "required": ["error"],
        "additionalProperties": false,
        "properties": {
            "error": {
                "type": "object",
                "required": ["code", "message"],
                "additionalProperties": false,
                "properties": {
                    "code": {"type": "string"},
                    "message": {"type": "string"},
                    "fields": {"type": "object", "additionalProperties": {"type": "string"}}
                }
            }
        }
    })
}

pub fn document() -> Value {
    let mut paths = Map::new();
    for route in ROUTES {
        let entry = paths
            .entry(route.path.to_owned())
            .or_insert_with(|| Value::Object(Map::new()));
        entry
            .as_object_mut()
            .expect("path item is an object")
            .insert(route.method.to_owned(), operation(route));
    }
    json!({
        "openapi": "3.0.3",
        "info": {
            "title": "parcelhub",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Crowdsourced parcel delivery: accounts, deliveries, couriers and live tracking."
        },
        "paths": paths,
        "components": {
            "securitySchemes": {
                "bearer": {"type": "http", "scheme": "bearer", "bearerFormat": "JWT"},
                "basic": {"type": "http", "scheme": "basic"}
            },
            "schemas": {"ErrorEnvelope": error_envelope_schema()}
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_route_is_documented_once() {
        let doc = document();
        let mut documented = Vec::new();
        for (path, item) in doc["paths"].as_object().unwrap() {
            for method in item.as_object().unwrap().keys() {
                documented.push((method.clone(), path.clone()));
            }
        }
        let mut table: Vec<_> = ROUTES
            .iter()
            .map(|r| (r.method.to_owned(), r.path.to_owned()))
            .collect();
        documented.sort();
        table.sort();
        assert_eq!(documented, table);
        let ids: std::collections::BTreeSet<_> = ROUTES.iter().map(operation_id).collect();
        assert_eq!(ids.len(), ROUTES.len(), "operation ids are unique");
    }

    #[test]
    fn path_parameters_are_declared() {
        let doc = document();
        let op = &doc["paths"]["/api/admin/{entity}/{id}/"]["patch"];
        let names: Vec<_> = op["parameters"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["name"].clone())
            .collect();
        assert_eq!(names, [json!("entity"), json!("id")]);
        assert_eq!(op["security"], json!([{"bearer": []}]));
    }
}
