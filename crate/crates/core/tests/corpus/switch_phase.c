#define N 64

int run(int mode) {
    int v[N];
    int acc = 0;
    for (int i = 0; i < N; i++)
        v[i] = i;
    for (int step = 0; step < 3; step++) {
        #pragma omp target teams distribute parallel for
        for (int i = 0; i < N; i++)
            v[i] = v[i] * 2 + step;
        switch (mode) {
        case 0:
            acc += v[0];
            break;
        case 1:
            acc -= 1;
        default:
            acc += 2;
        }
    }
    return acc;
}

int main() {
    return run(1);
}
