#include "snp/run_trace.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "snp/errors.hpp"

namespace snp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void check_cell(const std::string& cell) {
    if (cell.find_first_of(",\n\r") != std::string::npos) {
        throw ContractError("trace cell '" + cell + "' contains a separator");
    }
}

}  // namespace

void RunTrace::add(long iteration, std::string record, std::string language, double value, std::string other,
                   std::string detail) {
    if (!rows_.empty() && iteration < rows_.back().iteration) {
        throw ContractError("trace iterations must not go backwards");
    }
    check_cell(record);
    check_cell(language);
    check_cell(other);
    check_cell(detail);
    rows_.push_back(TraceRow{iteration, std::move(record), std::move(language), std::move(other), value,
                             std::move(detail)});
}

std::vector<TraceRow> RunTrace::select(const std::string& record) const {
    std::vector<TraceRow> out;
    for (const auto& r : rows_)
        if (r.record == record) out.push_back(r);
    return out;
}

long RunTrace::last_iteration() const { return rows_.empty() ? -1 : rows_.back().iteration; }

bool RunTrace::has(const std::string& record) const {
    for (const auto& r : rows_)
        if (r.record == record) return true;
    return false;
}

std::string RunTrace::to_csv() const {
    std::string out = "iteration,record,language,other,value,detail\n";
    char num[64];
    for (const auto& r : rows_) {
        std::snprintf(num, sizeof num, "%.17g", r.value);
        out += std::to_string(r.iteration) + ',' + r.record + ',' + r.language + ',' + r.other + ',' + num + ',' +
               r.detail + '\n';
    }
    return out;
}

RunTrace RunTrace::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "iteration,record,language,other,value,detail") {
        throw FormatError("trace header must be 'iteration,record,language,other,value,detail'", 1);
    }
    RunTrace trace;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 6) throw FormatError("expected 6 fields, found " + std::to_string(cells.size()), lineno);
        TraceRow row;
        try {
            std::size_t used = 0;
            row.iteration = std::stol(cells[0], &used);
            if (used != cells[0].size()) throw std::invalid_argument("iteration");
            row.value = std::stod(cells[4], &used);
            if (used != cells[4].size()) throw std::invalid_argument("value");
        } catch (const std::exception&) {
            throw FormatError("malformed iteration or value", lineno);
        }
        if (!trace.rows_.empty() && row.iteration < trace.rows_.back().iteration) {
            throw FormatError("iterations go backwards", lineno);
        }
        row.record = cells[1];
        row.language = cells[2];
        row.other = cells[3];
        row.detail = cells[5];
        trace.rows_.push_back(std::move(row));
    }
    return trace;
}

void RunTrace::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write trace " + path);
    out << to_csv();
    if (!out) throw UsageError("failed writing trace " + path);
}

RunTrace RunTrace::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open trace " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return from_csv(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace snp
