#define N 100

int main() {
    int a[N] = {};
    #pragma omp target
    for (int i = 0; i < N; ++i) {
        a[i] += i;
    }

    #pragma omp target
    for (int i = 0; i < N; ++i) {
        a[i] *= i;
    }
    return a[N - 1];
}
