#define N 50

int main() {
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < N; i++) {
    }
    int a[N];
    for (int i = 0; i < N; i++)
        a[i] = i;
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < N; i++)
        a[i] += 1;
    return a[0];
}
