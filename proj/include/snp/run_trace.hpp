#pragma once

#include <string>
#include <vector>

namespace snp {

// One measurement taken during training. `record` names the quantity:
//   loss        training loss of `language` at `iteration`
//   query_loss  query-set loss of `language` (meta-training)
//   lr          scheduled learning rate of parameter group `language`
//   grad_norm   norm of the per-language gradient
//   cosine      cosine between the gradients of `language` and `other`
//   mask        binarized head mask of `language`, bits in `detail`
//   epoch_loss  mean training loss over epoch `iteration`
struct TraceRow {
    long iteration = 0;
    std::string record;
    std::string language;
    std::string other;
    double value = 0.0;
    std::string detail;

    bool operator==(const TraceRow&) const = default;
};

class RunTrace {
public:
    void add(long iteration, std::string record, std::string language, double value, std::string other = {},
             std::string detail = {});

    const std::vector<TraceRow>& rows() const { return rows_; }
    std::vector<TraceRow> select(const std::string& record) const;
    long last_iteration() const;
    bool has(const std::string& record) const;

    // CSV with header iteration,record,language,other,value,detail; values use
    // 17 significant digits so a round trip is exact.
    std::string to_csv() const;
    static RunTrace from_csv(const std::string& text);
    void write(const std::string& path) const;
    static RunTrace read(const std::string& path);

private:
    std::vector<TraceRow> rows_;
};

}  // namespace snp
