#pragma once
// Line-oriented log ingestion and serialization. One JSON object per line.

#include <iosfwd>
#include <string>
#include <vector>

#include "cpscode/record.hpp"

namespace cpscode {

struct ParseOptions {
  // Strict mode rejects unknown fields; lenient mode ignores them.
  bool strict = false;
};

// Parses records in input order. Throws Error with MalformedLine (carrying
// the 1-based line number in the message), DuplicateRecordId, or
// LabelIneligibleForKind on the first bad line.
std::vector<BehaviorRecord> parse_log(std::istream& in,
                                      const ParseOptions& options = {});
std::vector<BehaviorRecord> parse_log_file(const std::string& path,
                                           const ParseOptions& options = {});

std::string serialize_record(const BehaviorRecord& record);
void serialize_log(const std::vector<BehaviorRecord>& records,
                   std::ostream& out);
void serialize_log_file(const std::vector<BehaviorRecord>& records,
                        const std::string& path);

}  // namespace cpscode
