#include "cpscode/log_io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cpscode/error.hpp"

namespace cpscode {
namespace {

using nlohmann::json;

[[noreturn]] void malformed(size_t line_no, const std::string& reason) {
  raise(ErrorCode::MalformedLine,
        "line " + std::to_string(line_no) + ": " + reason);
}

const std::set<std::string> kRecordFields = {
    "id",   "ts",   "participant", "group",          "level",
    "kind", "text", "action",      "label",          "predicted_label"};
const std::set<std::string> kActionFields = {"type", "resistor", "from", "to",
                                             "expression"};

void check_unknown_fields(const json& obj, const std::set<std::string>& known,
                          size_t line_no, const char* where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      malformed(line_no, std::string("unknown ") + where + " field \"" +
                             it.key() + "\" in strict mode");
    }
  }
}

ActionEvent parse_action(const json& a, size_t line_no, bool strict) {
  if (!a.is_object() || !a.contains("type") || !a["type"].is_string()) {
    malformed(line_no, "action must be an object with a \"type\" string");
  }
  if (strict) check_unknown_fields(a, kActionFields, line_no, "action");
  const std::string type = a["type"].get<std::string>();
  if (type == "change_resistor") {
    if (!a.contains("resistor") || !a["resistor"].is_number_integer()) {
      malformed(line_no, "change_resistor requires integer \"resistor\"");
    }
    ChangeResistor ev;
    ev.resistor_id = a["resistor"].get<int>();
    if (ev.resistor_id < 0 || ev.resistor_id > 3) {
      malformed(line_no, "resistor id must be in 0..3");
    }
    if (!a.contains("from") || !a.contains("to") ||
        !a["from"].is_number() || !a["to"].is_number()) {
      malformed(line_no, "change_resistor requires numeric \"from\"/\"to\"");
    }
    ev.from_ohms = a["from"].get<double>();
    ev.to_ohms = a["to"].get<double>();
    if (!std::isfinite(ev.from_ohms) || !std::isfinite(ev.to_ohms) ||
        ev.from_ohms < 0 || ev.to_ohms < 0) {
      malformed(line_no, "ohm values must be finite and >= 0");
    }
    return ev;
  }
  if (type == "calculate") {
    Calculate ev;
    if (a.contains("expression")) {
      if (!a["expression"].is_string()) {
        malformed(line_no, "calculate \"expression\" must be a string");
      }
      ev.expression = a["expression"].get<std::string>();
    }
    return ev;
  }
  if (type == "submit") return Submit{};
  if (type == "open_zoom") return OpenZoom{};
  if (type == "view_board_in_zoom") return ViewBoardInZoom{};
  malformed(line_no, "unknown action type \"" + type + "\"");
}

json action_to_json(const ActionEvent& event) {
  json a;
  std::visit(
      [&a](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, ChangeResistor>) {
          a["type"] = "change_resistor";
          a["resistor"] = ev.resistor_id;
          a["from"] = ev.from_ohms;
          a["to"] = ev.to_ohms;
        } else if constexpr (std::is_same_v<T, Calculate>) {
          a["type"] = "calculate";
          a["expression"] = ev.expression;
        } else if constexpr (std::is_same_v<T, Submit>) {
          a["type"] = "submit";
        } else if constexpr (std::is_same_v<T, OpenZoom>) {
          a["type"] = "open_zoom";
        } else {
          a["type"] = "view_board_in_zoom";
        }
      },
      event);
  return a;
}

CpsLabel parse_label_field(const json& value, size_t line_no,
                           const char* field) {
  if (!value.is_string()) {
    malformed(line_no, std::string("\"") + field + "\" must be a string");
  }
  auto label = parse_label(value.get<std::string>());
  if (!label) {
    malformed(line_no, "unknown label \"" + value.get<std::string>() + "\"");
  }
  return *label;
}

BehaviorRecord parse_line(const std::string& line, size_t line_no,
                          const ParseOptions& options) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    malformed(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) malformed(line_no, "record must be a JSON object");
  if (options.strict) {
    check_unknown_fields(obj, kRecordFields, line_no, "record");
  }

  for (const char* field : {"id", "ts", "participant", "group", "level",
                            "kind"}) {
    if (!obj.contains(field)) {
      malformed(line_no, std::string("missing field \"") + field + "\"");
    }
  }

  BehaviorRecord rec;
  if (!obj["id"].is_string()) malformed(line_no, "\"id\" must be a string");
  rec.record_id = obj["id"].get<std::string>();
  if (rec.record_id.empty()) malformed(line_no, "\"id\" must be non-empty");
  if (!obj["ts"].is_number_integer()) {
    malformed(line_no, "\"ts\" must be integer milliseconds");
  }
  rec.timestamp_ms = obj["ts"].get<std::int64_t>();
  if (!obj["participant"].is_string() || !obj["group"].is_string()) {
    malformed(line_no, "\"participant\" and \"group\" must be strings");
  }
  rec.participant_id = obj["participant"].get<std::string>();
  rec.group_id = obj["group"].get<std::string>();
  if (!obj["level"].is_number_integer()) {
    malformed(line_no, "\"level\" must be an integer");
  }
  rec.task_level = obj["level"].get<int>();
  if (rec.task_level < 1 || rec.task_level > 4) {
    malformed(line_no, "\"level\" must be in 1..4");
  }

  if (!obj["kind"].is_string()) malformed(line_no, "\"kind\" must be a string");
  const std::string kind = obj["kind"].get<std::string>();
  if (kind == "chat") {
    rec.kind = RecordKind::Chat;
    if (!obj.contains("text") || !obj["text"].is_string()) {
      malformed(line_no, "chat record requires string \"text\"");
    }
    rec.text = obj["text"].get<std::string>();
  } else if (kind == "manipulation") {
    rec.kind = RecordKind::Manipulation;
    if (!obj.contains("action")) {
      malformed(line_no, "manipulation record requires \"action\"");
    }
    rec.event = parse_action(obj["action"], line_no, options.strict);
  } else {
    malformed(line_no, "\"kind\" must be \"chat\" or \"manipulation\"");
  }

  if (obj.contains("label")) {
    CpsLabel label = parse_label_field(obj["label"], line_no, "label");
    if (!label_eligible_for_kind(label, rec.kind)) {
      raise(ErrorCode::LabelIneligibleForKind,
            "line " + std::to_string(line_no) + ": label " +
                std::string(label_name(label)) + " is not eligible for " +
                (rec.kind == RecordKind::Chat ? "chat" : "manipulation") +
                " records");
    }
    rec.gold_label = label;
  }
  if (obj.contains("predicted_label")) {
    rec.predicted_label =
        parse_label_field(obj["predicted_label"], line_no, "predicted_label");
  }
  return rec;
}

}  // namespace

std::vector<BehaviorRecord> parse_log(std::istream& in,
                                      const ParseOptions& options) {
  std::vector<BehaviorRecord> records;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    BehaviorRecord rec = parse_line(line, line_no, options);
    if (!seen_ids.insert(rec.record_id).second) {
      raise(ErrorCode::DuplicateRecordId,
            "line " + std::to_string(line_no) + ": duplicate record id \"" +
                rec.record_id + "\"");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<BehaviorRecord> parse_log_file(const std::string& path,
                                           const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open log file: " + path);
  return parse_log(in, options);
}

std::string serialize_record(const BehaviorRecord& record) {
  json obj;
  obj["id"] = record.record_id;
  obj["ts"] = record.timestamp_ms;
  obj["participant"] = record.participant_id;
  obj["group"] = record.group_id;
  obj["level"] = record.task_level;
  if (record.kind == RecordKind::Chat) {
    obj["kind"] = "chat";
    obj["text"] = record.text;
  } else {
    obj["kind"] = "manipulation";
    obj["action"] = action_to_json(record.event);
  }
  if (record.gold_label) obj["label"] = label_name(*record.gold_label);
  if (record.predicted_label) {
    obj["predicted_label"] = label_name(*record.predicted_label);
  }
  return obj.dump();
}

void serialize_log(const std::vector<BehaviorRecord>& records,
                   std::ostream& out) {
  for (const auto& rec : records) out << serialize_record(rec) << '\n';
}

void serialize_log_file(const std::vector<BehaviorRecord>& records,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::IoError, "cannot open output file: " + path);
  serialize_log(records, out);
}

}  // namespace cpscode
