// Desk-scale synthetic provenance: recurring benign motifs over a small
// template library plus labeled attack chains in the final third of the span.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "pidskit/errors.hpp"
#include "pidskit/ingest.hpp"
#include "pidskit/io.hpp"
#include "pidskit/rng.hpp"

namespace pidskit {

namespace {

constexpr std::int64_t kStartNs = 1'523'000'040'000'000'000;  // 2018-04-06, minute aligned
constexpr std::int64_t kSecond = 1'000'000'000;
constexpr std::int64_t kHour = 3600 * kSecond;

class Generator {
public:
    explicit Generator(const SyntheticParams& p)
        : p_(p), rng_(p.seed), span_(p.span_hours * kHour) {
        make_fixtures();
    }

    SyntheticDataset run();

private:
    std::string fresh_id() {
        char buf[33];
        std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_.next()),
                      static_cast<unsigned long long>(rng_.next()));
        return buf;
    }

    Entity subject(std::string path, std::string cmd) {
        return Entity{fresh_id(), EntityKind::Subject,
                      {{"type", "process"}, {"path", std::move(path)}, {"cmd_line", std::move(cmd)}}};
    }
    Entity file(std::string path) {
        return Entity{fresh_id(), EntityKind::File, {{"type", "file"}, {"path", std::move(path)}}};
    }
    Entity netflow(std::string ip, int port) {
        return Entity{fresh_id(), EntityKind::Netflow,
                      {{"type", "inet"}, {"remote_ip", std::move(ip)}, {"remote_port", std::to_string(port)}}};
    }

    std::string octet() { return std::to_string(rng_.below(256)); }
    int ephemeral_port() { return static_cast<int>(rng_.between(32768, 60999)); }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[rng_.below(v.size())];
    }

    void make_fixtures();

    // Appends events spaced a few hundred ms apart, starting at t.
    struct Cursor {
        std::int64_t t;
    };
    void emit(Cursor& c, Op op, const Entity& src, const Entity& dst) {
        c.t += rng_.between(1'000'000, 400'000'000);
        benign_.push_back(ProvEvent{0, c.t, op, src, dst});
    }

    void motif_web(std::int64_t t);
    void motif_logrotate(std::int64_t t);
    void motif_backup(std::int64_t t);
    void motif_updater(std::int64_t t);
    void motif_ssh(std::int64_t t);
    void motif_beacon(std::int64_t t);
    void attack_chain(int attack_id, std::vector<ProvEvent>& out, std::ostringstream& labels);

    SyntheticParams p_;
    Rng rng_;
    std::int64_t span_;
    std::vector<ProvEvent> benign_;

    Entity cron_, sshd_, agent_, libc_, logrotate_conf_, apt_sources_, vimrc_;
    std::vector<Entity> nginx_workers_, var_logs_, srv_data_, documents_, web_pages_, tools_;
};

void Generator::make_fixtures() {
    cron_ = subject("/usr/sbin/cron", "/usr/sbin/cron -f");
    sshd_ = subject("/usr/sbin/sshd", "/usr/sbin/sshd -D");
    agent_ = subject("/opt/monitor/bin/agent", "agent --interval 60");
    for (int i = 0; i < 4; ++i)
        nginx_workers_.push_back(subject("/usr/sbin/nginx", "nginx: worker process"));
    libc_ = file("/lib/x86_64-linux-gnu/libc.so.6");
    logrotate_conf_ = file("/etc/logrotate.conf");
    apt_sources_ = file("/etc/apt/sources.list");
    vimrc_ = file("/etc/vim/vimrc");
    for (const char* l : {"syslog", "auth.log", "kern.log", "nginx/access.log", "nginx/error.log"})
        var_logs_.push_back(file(std::string("/var/log/") + l));
    for (int i = 0; i < 50; ++i)
        srv_data_.push_back(file("/srv/data/projects/report_" + std::to_string(i) + ".csv"));
    for (int i = 0; i < 40; ++i)
        documents_.push_back(file("/home/admin/documents/notes_" + std::to_string(i) + ".txt"));
    for (int i = 0; i < 30; ++i)
        web_pages_.push_back(file("/var/www/html/page_" + std::to_string(i) + ".html"));
    for (const char* t : {"ls", "cat", "grep", "less", "tail", "vim"})
        tools_.push_back(file(std::string("/usr/bin/") + t));
}

void Generator::motif_web(std::int64_t t) {
    Cursor c{t};
    const Entity& worker = pick(nginx_workers_);
    const Entity client = netflow("10.0." + octet() + "." + octet(), ephemeral_port());
    emit(c, Op::Recv, worker, client);
    emit(c, Op::Read, worker, pick(web_pages_));
}

void Generator::motif_logrotate(std::int64_t t) {
    Cursor c{t};
    const Entity proc = subject("/usr/sbin/logrotate", "/usr/sbin/logrotate /etc/logrotate.conf");
    emit(c, Op::Fork, cron_, proc);
    emit(c, Op::Mmap, proc, libc_);
    emit(c, Op::Read, proc, logrotate_conf_);
    const Entity& log = pick(var_logs_);
    emit(c, Op::Write, proc, log);
    const Entity archived = file("/var/log/archive/" + std::to_string(rng_.below(100000)) + ".gz");
    emit(c, Op::Unlink, proc, archived);
}

void Generator::motif_backup(std::int64_t t) {
    Cursor c{t};
    const Entity proc = subject("/usr/bin/rsync", "rsync -a /srv/data backup@10.0.5.20::data");
    emit(c, Op::Fork, cron_, proc);
    emit(c, Op::Mmap, proc, libc_);
    for (int i = 0; i < 3; ++i) emit(c, Op::Read, proc, pick(srv_data_));
    emit(c, Op::Write, proc, file("/tmp/backup_" + std::to_string(rng_.below(1000000)) + ".tar"));
    emit(c, Op::Send, proc, netflow("10.0.5.20", 873));
}

void Generator::motif_updater(std::int64_t t) {
    Cursor c{t};
    const Entity proc = subject("/usr/bin/apt-get", "apt-get -q update");
    emit(c, Op::Fork, cron_, proc);
    emit(c, Op::Mmap, proc, libc_);
    emit(c, Op::Read, proc, apt_sources_);
    emit(c, Op::Connect, proc, netflow("151.101." + std::to_string(rng_.below(4)) + ".132", 443));
    emit(c, Op::Write, proc,
         file("/var/cache/apt/archives/pkg_" + std::to_string(rng_.below(5000)) + ".deb"));
}

void Generator::motif_ssh(std::int64_t t) {
    Cursor c{t};
    const Entity shell = subject("/bin/bash", "-bash");
    emit(c, Op::Fork, sshd_, shell);
    emit(c, Op::Mmap, shell, libc_);
    emit(c, Op::Recv, shell, netflow("10.0.0." + std::to_string(rng_.between(2, 9)), ephemeral_port()));
    emit(c, Op::Execute, shell, pick(tools_));
    const Entity editor = subject("/usr/bin/vim", "vim notes.txt");
    emit(c, Op::Fork, shell, editor);
    emit(c, Op::Mmap, editor, libc_);
    emit(c, Op::Read, editor, vimrc_);
    emit(c, Op::Write, editor, pick(documents_));
    emit(c, Op::Write, editor, pick(documents_));
}

void Generator::motif_beacon(std::int64_t t) {
    Cursor c{t};
    emit(c, Op::Send, agent_, netflow("10.0.9.9", 8125));
    emit(c, Op::Read, agent_, file("/proc/" + std::to_string(rng_.between(300, 32000)) + "/stat"));
}

void Generator::attack_chain(int attack_id, std::vector<ProvEvent>& out, std::ostringstream& labels) {
    // Starts inside the final third and finishes well before the end.
    const std::int64_t lo = span_ * 2 / 3 + kSecond;
    const std::int64_t hi = span_ - 10 * 60 * kSecond;
    const std::int64_t t = kStartNs + rng_.between(lo, std::max(lo, hi));

    const Entity c2 = netflow("185.220.101." + std::to_string(rng_.between(1, 254)), 4444);
    const Entity implant = subject("/tmp/.X11-unix/.sysupd", "/tmp/.X11-unix/.sysupd --daemon");
    const Entity payload = file("/tmp/.X11-unix/.payload");
    const Entity secret = file("/home/admin/.ssh/id_rsa");

    out.push_back(ProvEvent{0, t, Op::Connect, implant, c2});
    out.push_back(ProvEvent{0, t + 2 * kSecond, Op::Execute, implant, payload});
    out.push_back(ProvEvent{0, t + 5 * kSecond, Op::Read, implant, secret});
    out.push_back(ProvEvent{0, t + 8 * kSecond, Op::Send, implant, c2});

    for (const Entity* e : {&c2, &implant, &payload, &secret}) labels << e->id << ',' << attack_id << '\n';
}

SyntheticDataset Generator::run() {
    const std::int64_t budget = p_.n_benign_events;

    // Periodic beacons take at most a quarter of the budget.
    const std::int64_t n_beacons = std::max<std::int64_t>(1, budget / 8);
    const std::int64_t period = std::max<std::int64_t>(60 * kSecond, span_ / n_beacons);
    for (std::int64_t t = kStartNs + rng_.between(0, period); t < kStartNs + span_ - 10 * kSecond; t += period) {
        if (static_cast<std::int64_t>(benign_.size()) + 2 > budget / 4) break;
        motif_beacon(t + rng_.between(-5 * kSecond, 5 * kSecond));
    }

    while (static_cast<std::int64_t>(benign_.size()) < budget) {
        const std::int64_t t = kStartNs + rng_.between(0, span_ - 30 * kSecond);
        const auto roll = rng_.below(100);
        if (roll < 50) motif_web(t);
        else if (roll < 62) motif_ssh(t);
        else if (roll < 74) motif_logrotate(t);
        else if (roll < 87) motif_backup(t);
        else motif_updater(t);
    }
    benign_.resize(static_cast<std::size_t>(budget));

    std::ostringstream labels;
    std::vector<ProvEvent> all = std::move(benign_);
    for (int a = 0; a < p_.n_attack_chains; ++a) attack_chain(a + 1, all, labels);

    std::stable_sort(all.begin(), all.end(),
                     [](const ProvEvent& a, const ProvEvent& b) { return a.ts < b.ts; });
    std::string text;
    text.reserve(all.size() * 330);
    std::uint64_t id = 1;
    for (auto& e : all) {
        e.event_id = id++;
        text += format_event_line(e);
        text += '\n';
    }
    return SyntheticDataset{std::move(text), labels.str(), kStartNs, kStartNs + span_};
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticParams& p) {
    if (p.n_benign_events < 1000) throw ConfigError("n_benign_events must be at least 1000");
    if (p.n_attack_chains < 0 || p.n_attack_chains > 1000) throw ConfigError("n_attack_chains out of range");
    if (p.span_hours < 1 || p.span_hours > 24 * 365) throw ConfigError("span_hours out of range");
    return Generator(p).run();
}

void write_synthetic(const SyntheticParams& p, const std::filesystem::path& dir) {
    const auto ds = generate_synthetic(p);
    std::filesystem::create_directories(dir);
    write_text_file(dir / "events.jsonl", ds.events);
    write_text_file(dir / "labels.csv", ds.labels);
}

}  // namespace pidskit
